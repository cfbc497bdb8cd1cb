from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import expm_multiply

from conftest import sine_masses
from qsdlab.errors import NoLinearRegime, SlowConvergence
from qsdlab.model import DomainSpec, GridOperator, GridSpec, PotentialField, WeightFunction
from qsdlab.spectral import (
    decay_residuals,
    expv,
    gap_estimate,
    principal_eigentriple,
    rayleigh_residuals,
    semigroup_apply,
    survival_curve,
    survival_decay,
)
from qsdlab.spectral.eigen import generator_action


def one_cell(a: float) -> GridOperator:
    grid = GridSpec(DomainSpec(((0, 1),)), (2,))
    return GridOperator(sps.csr_matrix([[a]]), grid)


# -- Krylov exponential --------------------------------------------------------


@pytest.mark.parametrize("t", [0.01, 1.0, 25.0])
def test_expv_matches_scipy(quartic_op, t):
    rng = np.random.default_rng(1)
    v = rng.standard_normal(quartic_op.dim)
    ref = expm_multiply(t * quartic_op.matrix, v)
    out = expv(quartic_op.matrix, v, t, tol=1e-12)
    assert np.max(np.abs(out - ref)) <= 1e-9 * np.max(np.abs(v))


def test_expv_dense_nonsymmetric():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((40, 40))
    v = rng.standard_normal(40)
    from scipy.linalg import expm

    ref = expm(0.7 * A) @ v
    assert np.allclose(expv(A, v, 0.7), ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_expv_zero_time_is_identity(quartic_op):
    v = np.arange(quartic_op.dim, dtype=float)
    assert np.array_equal(expv(quartic_op.matrix, v, 0.0), v)


# -- semigroup -----------------------------------------------------------------


def test_semigroup_zero_time(quartic_op):
    f = np.linspace(0, 1, quartic_op.dim)
    assert np.array_equal(semigroup_apply(quartic_op, None, f, 0.0), f)


def test_semigroup_constant_potential_factor(quartic_op):
    n = quartic_op.dim
    f = np.cos(np.linspace(0, 3, n)) + 2
    c = 0.37
    base = semigroup_apply(quartic_op, None, f, 1.5)
    shifted = semigroup_apply(quartic_op, PotentialField.constant(n, c), f, 1.5)
    assert np.max(np.abs(shifted - np.exp(c * 1.5) * base) / np.abs(base)) <= 1e-12


def test_semigroup_sine_eigenfunction(brownian):
    grid, op = brownian
    s = np.sin(grid.nodes[:, 0])
    out = semigroup_apply(op, None, s, 1.0)
    # the lattice sine is an exact eigenvector with eigenvalue -(1 - cos h)/h² = -1/2 + O(h²)
    assert np.max(np.abs(out - np.exp(-0.5) * s)) <= 1e-5


def test_semigroup_rejects_negative_time(quartic_op):
    with pytest.raises(ValueError):
        semigroup_apply(quartic_op, None, np.ones(quartic_op.dim), -1.0)


# -- eigentriple ---------------------------------------------------------------


def test_one_cell_triple():
    tr = principal_eigentriple(one_cell(-2.5), np.array([0.75]))
    assert tr.lam == -1.75
    assert tr.mu.tolist() == [1.0] and tr.phi.tolist() == [1.0]


def test_interval_brownian_triple(brownian):
    grid, op = brownian
    tr = principal_eigentriple(op)
    h = grid.spacing[0]
    assert tr.lam == pytest.approx(-(1 - np.cos(h)) / h**2, rel=1e-10)
    assert abs(tr.lam + 0.5) < 1e-3
    x = grid.nodes[:, 0]
    assert np.abs(tr.mu - sine_masses(grid)).sum() < 1e-2
    phi_ref = 4 / np.pi * np.sin(x)
    assert h * np.abs(tr.phi - phi_ref).sum() < 1e-2
    assert np.abs(tr.mu * tr.phi - sine_masses(grid, 2)).sum() < 1e-2


def test_triple_normalisation_and_positivity(rotating_op):
    n = rotating_op.dim
    V = PotentialField(np.sin(3 * rotating_op.nodes[:, 0]))
    tr = principal_eigentriple(rotating_op, V)
    chk = tr.check(V.max())
    assert all(chk.values()), chk
    assert tr.mu.shape == (n,)


def test_left_right_duality(rotating_op):
    tr = principal_eigentriple(rotating_op)
    trT = principal_eigentriple(rotating_op.transpose())
    assert trT.lam == pytest.approx(tr.lam, rel=1e-9)
    assert tr.lam_right == pytest.approx(tr.lam, rel=1e-8)
    assert tr.lam_left == pytest.approx(tr.lam, rel=1e-8)
    # the left vector of L is the right vector of L^T
    assert np.allclose(trT.phi / trT.phi.sum(), tr.mu, atol=1e-8)


def test_rayleigh_residuals_small(quartic_op):
    tr = principal_eigentriple(quartic_op)
    res = rayleigh_residuals(quartic_op, None, tr, t=1.0)
    assert res["right"] < 1e-8 and res["left"] < 1e-8


def test_slow_convergence_carries_partial(quartic_op):
    with pytest.raises(SlowConvergence) as info:
        principal_eigentriple(quartic_op, max_iter=1, tol=1e-14)
    assert info.value.partial is not None
    assert np.all(info.value.partial.mu >= 0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-5, 5))
def test_shift_covariance(c):
    from conftest import interval_brownian

    _, op = interval_brownian(60)
    rng = np.random.default_rng(7)
    V = rng.uniform(-1, 1, op.dim)
    a = principal_eigentriple(op, V, tol=1e-12)
    b = principal_eigentriple(op, V + c, tol=1e-12)
    assert b.lam - a.lam == pytest.approx(c, abs=1e-10)
    assert np.max(np.abs(a.mu - b.mu)) < 1e-10
    assert np.max(np.abs(a.phi - b.phi)) < 1e-10


def test_generator_action_matches_product(quartic_op):
    f = np.exp(np.linspace(-1, 1, quartic_op.dim))
    A = quartic_op.matrix
    assert np.allclose(generator_action(A, f), A @ f, rtol=1e-9, atol=1e-9)


# -- gap estimate --------------------------------------------------------------


def test_eigenfunction_probe_does_not_decay(brownian):
    _, op = brownian
    tr = principal_eigentriple(op)
    times = np.linspace(0, 5, 11)
    rho = decay_residuals(op, None, None, tr, tr.phi, times)
    assert rho.max() <= 1e-8


def test_gap_interval_brownian(brownian):
    grid, op = brownian
    tr = principal_eigentriple(op)
    x = grid.nodes[:, 0]
    est = gap_estimate(op, None, None, tr, [np.ones_like(x), x], horizon=12.0)
    assert est.delta == pytest.approx(1.5, rel=0.05)
    assert est.dominates()
    assert est.C >= 1.0
    # the symmetric probe has no second-mode component and decays at (9 - 1)/2
    assert est.per_probe_delta[0] == pytest.approx(4.0, rel=0.05)


def test_weight_probe_initial_residual(quartic_op):
    tr = principal_eigentriple(quartic_op)
    x = quartic_op.nodes[:, 0]
    W = WeightFunction(1 + x**2)
    times = np.linspace(0, 6, 25)
    rho = decay_residuals(quartic_op, None, W, tr, W.values, times)
    direct = np.max(np.abs(W.values - (tr.mu @ W.values) * tr.phi) / W.values) / 1.0
    assert rho[0] == pytest.approx(direct, rel=1e-12)
    env = np.maximum.accumulate(rho[::-1])[::-1]
    assert np.all(np.diff(env) <= 0)
    assert rho[-1] < 1e-2 * rho[0]


def test_gap_requires_decay(brownian):
    _, op = brownian
    tr = principal_eigentriple(op)
    with pytest.raises(NoLinearRegime):
        gap_estimate(op, None, None, tr, [tr.phi], horizon=5.0)


# -- survival decay ------------------------------------------------------------


def test_survival_decay_one_cell():
    assert survival_decay(one_cell(-0.8), 0, 5.0) == pytest.approx(-0.8, rel=1e-12)


def test_survival_decay_interval(brownian):
    grid, op = brownian
    slopes = [survival_decay(op, i, 10.0) for i in (20, 100, 199, 300, 380)]
    assert all(abs(s + 0.5) < 1e-3 for s in slopes)
    assert max(slopes) - min(slopes) < 1e-4


def test_survival_curve_starts_at_zero(brownian):
    _, op = brownian
    y = survival_curve(op, 199, [0.0, 1.0])
    assert y[0] == 0.0 and y[1] < 0
