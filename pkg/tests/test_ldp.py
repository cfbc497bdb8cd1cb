from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import interval_brownian, sine_masses
from qsdlab.errors import BoxActive, DerivativeMismatch, NotAbsolutelyContinuous
from qsdlab.ldp import (
    CramerFunctional,
    DirichletFormContext,
    central_difference,
    cramer,
    dirichlet_eigenvalue,
    gateaux,
    qed,
    rate_function,
    reversible_rate,
)
from qsdlab.model import DomainSpec, GridOperator, GridSpec, OverdampedLangevin, ScalarField
from qsdlab.spectral import principal_eigentriple

QUARTIC = OverdampedLangevin(potential=ScalarField("x**2/2 + x**4/4"))


@pytest.fixture(scope="module")
def coarse():
    grid, op = interval_brownian(100)
    return grid, op, CramerFunctional(op)


@pytest.fixture(scope="module")
def quartic_ctx():
    grid = GridSpec.from_spacing(DomainSpec(((-1.0, 1.5),)), 0.025)
    return DirichletFormContext.from_process(QUARTIC, grid)


# -- Cramér functional and q.e.d. ----------------------------------------------


def test_cramer_zero_and_constant(coarse):
    _, op, F = coarse
    assert F(np.zeros(op.dim)) == 0.0
    assert cramer(op, np.full(op.dim, 0.7)) == pytest.approx(0.7, abs=1e-12)


def test_qed_single_cell():
    grid = GridSpec(DomainSpec(((0, 1),)), (2,))
    op = GridOperator(sps.csr_matrix([[-3.0]]), grid)
    assert qed(principal_eigentriple(op)).masses.tolist() == [1.0]


def test_qed_interval_brownian(brownian):
    grid, op = brownian
    p = qed(principal_eigentriple(op)).masses
    assert np.abs(p - sine_masses(grid, 2)).sum() <= 1e-2


def test_qed_is_derivative_measure(coarse):
    _, op, F = coarse
    rng = np.random.default_rng(3)
    x = op.nodes[:, 0]
    for _ in range(10):
        V0 = rng.uniform(-1, 1) * np.cos(rng.uniform(0, 3) * x)
        V1 = rng.uniform(0, 1, op.dim)
        g = gateaux(F, V0, V1, check=False)
        fd = central_difference(F, V0, V1)
        assert abs(g - fd) <= 1e-6 * max(abs(g), abs(fd))


def test_gateaux_constant_direction(coarse):
    _, op, F = coarse
    V0 = np.sin(op.nodes[:, 0])
    assert gateaux(F, V0, np.ones(op.dim)) == pytest.approx(1.0, abs=1e-12)


def test_gateaux_left_half_indicator(coarse):
    grid, op, F = coarse
    x = grid.nodes[:, 0]
    # cell-averaged indicator of (0, π/2): the midpoint node's cell is split in two
    V1 = np.where(x < np.pi / 2 - 1e-12, 1.0, 0.0)
    V1[np.isclose(x, np.pi / 2)] = 0.5
    assert gateaux(F, np.zeros(op.dim), V1) == pytest.approx(0.5, abs=1e-10)


def test_gateaux_signed_direction_absolute(coarse):
    _, op, F = coarse
    rng = np.random.default_rng(11)
    for _ in range(5):
        V0 = rng.uniform(-1, 1, op.dim)
        V1 = rng.uniform(-1, 1, op.dim)
        g = gateaux(F, V0, V1, check=False)
        assert abs(g - central_difference(F, V0, V1)) <= 1e-8


def test_gateaux_mismatch_raises(coarse):
    _, op, F = coarse
    V1 = np.random.default_rng(0).uniform(0, 1, op.dim)
    with pytest.raises(DerivativeMismatch):
        gateaux(F, np.zeros(op.dim), V1, rtol=0.0)


def test_cramer_rejects_unbounded(coarse):
    _, op, F = coarse
    V = np.zeros(op.dim)
    V[3] = np.inf
    with pytest.raises(ValueError):
        F(V)


# -- rate function -------------------------------------------------------------


def test_rate_vanishes_at_qed(coarse):
    _, op, F = coarse
    r = rate_function(F.qed().masses, F)
    assert r.value <= 1e-8
    assert r.converged and not r.box_active
    V = r.maximizer_V.values
    assert np.abs(V - V.mean()).max() < 1e-6


def test_rate_positive_off_qed(coarse):
    grid, op, F = coarse
    b = 0.9 * F.qed().masses + 0.1 / grid.n
    r = rate_function(b, F)
    assert r.value >= 1e-3


def test_dirac_rate_grows_with_box(coarse):
    grid, op, F = coarse
    b = np.zeros(op.dim)
    b[40] = 1.0
    values = []
    for M in (5.0, 10.0, 20.0):
        with pytest.raises(BoxActive) as info:
            rate_function(b, F, M=M, strict=True)
        values.append(info.value.result.value)
    assert values[0] < values[1] < values[2]


def test_rate_centering_invariance(coarse):
    grid, op, F = coarse
    x = grid.nodes[:, 0]
    b = F.qed(0.3 * np.cos(2 * x)).masses
    a = rate_function(b, F, V0=0.2 * x)
    c = rate_function(b, F, V0=0.2 * x + 1.5)
    assert a.value == pytest.approx(c.value, abs=1e-9)


@settings(max_examples=8, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_rate_nonnegative_and_matches_tilt(coeffs):
    grid, op = interval_brownian(60)
    F = CramerFunctional(op)
    x = grid.nodes[:, 0]
    V = coeffs[0] * x + coeffs[1] * np.cos(x) + coeffs[2] * np.sin(2 * x)
    b = F.qed(V).masses
    r = rate_function(b, F, M=50.0)
    # β = π_V is attained at V, so I(β) = π_V(V) − 𝚲(V)
    direct = float(b @ V) - F(V)
    assert r.value >= 0
    assert r.value == pytest.approx(direct, abs=1e-8)


def test_legendre_objective_concave(coarse):
    grid, op, F = coarse
    rng = np.random.default_rng(5)
    b = rng.dirichlet(np.ones(op.dim))
    G = lambda V: float(b @ V) - F(V)  # noqa: E731
    for _ in range(10):
        Va, Vb = rng.uniform(-2, 2, (2, op.dim))
        assert G(0.5 * (Va + Vb)) >= 0.5 * (G(Va) + G(Vb)) - 1e-10


def test_rate_rejects_bad_beta(coarse):
    _, op, F = coarse
    with pytest.raises(ValueError):
        rate_function(-np.ones(op.dim), F)


# -- reversible context --------------------------------------------------------


def test_balance_defect(quartic_ctx):
    assert quartic_ctx.balance_defect() <= 1e-14


def test_form_matches_matrix_quadratic_form(quartic_ctx):
    f = np.random.default_rng(2).standard_normal(quartic_ctx.op.dim)
    direct = -float(f @ (quartic_ctx.pi * quartic_ctx.op.apply(f)))
    assert quartic_ctx.form_apply(f) == pytest.approx(direct, rel=1e-10)


def test_constant_density_is_boundary_energy(quartic_ctx):
    b = quartic_ctx.pi / quartic_ctx.pi.sum()
    # β ∝ π gives √h ≡ 1: only killing at the boundary contributes
    energy = float(np.sum(quartic_ctx.pi * quartic_ctx.killing))
    assert quartic_ctx.form_apply(np.ones(quartic_ctx.op.dim)) == pytest.approx(energy, rel=1e-12)
    lam = dirichlet_eigenvalue(quartic_ctx)
    assert reversible_rate(b, quartic_ctx) == pytest.approx(energy - lam, rel=1e-10)


def test_reversible_rate_zero_at_qed(quartic_ctx):
    F = CramerFunctional(quartic_ctx.op)
    assert abs(reversible_rate(F.qed().masses, quartic_ctx)) <= 1e-6


def test_reversible_rate_exterior_charge(quartic_ctx):
    grid = quartic_ctx.op.grid
    b = np.zeros(grid.all_nodes.shape[0])
    b[grid.interior_flat] = 1.0
    b[0] = 0.1  # a face node
    assert reversible_rate(b, quartic_ctx) == math.inf
    with pytest.raises(NotAbsolutelyContinuous):
        reversible_rate(b, quartic_ctx, strict=True)


def test_dirichlet_eigenvalue_interval():
    grid = GridSpec(DomainSpec(((0.0, np.pi),)), (400,))
    ctx = DirichletFormContext.from_process(OverdampedLangevin(potential=ScalarField("0")), grid)
    assert np.allclose(ctx.pi, 1.0 / grid.n)
    lam = dirichlet_eigenvalue(ctx)
    assert lam == pytest.approx(0.5, abs=1e-3)
    assert lam > 0


def test_dirichlet_eigenvalue_agrees_with_spectral(quartic_ctx):
    lam = dirichlet_eigenvalue(quartic_ctx)
    Lam = principal_eigentriple(quartic_ctx.op, tol=1e-12).lam
    assert abs(lam + Lam) <= 1e-8 * lam


def test_dirichlet_eigenvalue_sparse_route(monkeypatch, quartic_ctx):
    import qsdlab.ldp.reversible as rev

    dense = dirichlet_eigenvalue(quartic_ctx)
    monkeypatch.setattr(rev, "DENSE_EIG_MAX", 10)
    assert rev.dirichlet_eigenvalue(quartic_ctx) == pytest.approx(dense, rel=1e-10)


def test_reversible_matches_legendre_on_tilt(quartic_ctx):
    F = CramerFunctional(quartic_ctx.op)
    x = quartic_ctx.op.nodes[:, 0]
    p = F.qed().masses * np.exp(0.5 * np.sin(2 * x))
    p /= p.sum()
    r = rate_function(p, F, M=500.0)
    assert not r.box_active
    assert r.value == pytest.approx(reversible_rate(p, quartic_ctx), rel=1e-6)
