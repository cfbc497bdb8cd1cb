from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qsdlab.errors import AlphaOutOfRange, EmptyInterior, NonMonotoneScheme
from qsdlab.model import (
    DomainSpec,
    GridSpec,
    KineticLangevin,
    OverdampedLangevin,
    PotentialField,
    ScalarField,
    StableLyapunov,
    StableSDE,
    VectorField,
    WeightFunction,
    build_generator,
    fractional_quadrature,
    kinetic_domain,
    lyapunov_check,
    stable_constant,
    velocity_cutoff,
)
from qsdlab.model.fractional import central_cell_moment, square_tail_mass


# -- domains and grids ---------------------------------------------------------


def test_interior_index_is_bijection():
    grid = GridSpec(DomainSpec(((-1, 1), (-1, 1)), mask="1 - x**2 - y**2"), (20, 20))
    idx = grid.interior_index
    inside = idx[idx >= 0]
    assert np.array_equal(np.sort(inside), np.arange(grid.n))
    assert np.array_equal(idx[grid.interior_flat], np.arange(grid.n))
    assert np.all(grid.nodes[:, 0] ** 2 + grid.nodes[:, 1] ** 2 < 1)
    assert grid.complement_nonempty()


def test_face_nodes_are_exterior():
    grid = GridSpec(DomainSpec(((0.0, np.pi),)), (400,))
    assert grid.n == 399
    assert grid.spacing[0] == pytest.approx(np.pi / 400)
    assert grid.nodes[0, 0] == pytest.approx(np.pi / 400)


def test_empty_interior_raises():
    with pytest.raises(EmptyInterior):
        GridSpec(DomainSpec(((0, 1),)), (1,))
    with pytest.raises(EmptyInterior):
        GridSpec(DomainSpec(((0, 1), (0, 1)), mask="-1"), (4, 4))


def test_bad_bounds_rejected():
    with pytest.raises(ValueError):
        DomainSpec(((1.0, 0.0),))


def test_single_interior_cell_accepted():
    grid = GridSpec(DomainSpec(((0, 1),)), (2,))
    op = build_generator(OverdampedLangevin(potential=ScalarField("0")), grid)
    assert op.dim == 1
    assert op.matrix[0, 0] == pytest.approx(-1.0 / grid.spacing[0] ** 2)


# -- process specs -------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.0, 2.0, 2.5, -1.0])
def test_alpha_out_of_range(alpha):
    with pytest.raises(AlphaOutOfRange):
        StableSDE(ScalarField("x**2"), alpha)


def test_gamma_must_be_positive():
    with pytest.raises(ValueError):
        KineticLangevin(ScalarField("0"), 0.0)


def test_stable_constant_cauchy():
    assert stable_constant(1, 1.0) == pytest.approx(1 / np.pi)


def test_stable_constant_matches_fourier_symbol():
    # ∫ (1 - cos z) C |z|^{-1-α} dz = 1 is the normalisation of |ξ|^α
    for a in (0.5, 1.0, 1.5):
        C = stable_constant(1, a)
        near = integrate.quad(lambda z: (1 - np.cos(z)) * z ** (-1 - a), 0, 1, epsrel=1e-12)[0]
        osc = integrate.quad(lambda z: z ** (-1 - a), 1, np.inf, weight="cos", wvar=1.0)[0]
        val = 2 * C * (near + 1 / a - osc)
        assert val == pytest.approx(1.0, rel=1e-6)


def test_drift_and_potential_exclusive():
    with pytest.raises(ValueError):
        OverdampedLangevin()
    with pytest.raises(ValueError):
        OverdampedLangevin(potential=ScalarField("x"), drift=VectorField(("x",)))
    with pytest.raises(ValueError):
        OverdampedLangevin(drift=VectorField(("x",)), scheme="symmetric")


def test_unknown_symbol_rejected():
    with pytest.raises(ValueError):
        ScalarField("x + w", 1)


def test_potential_field_sup_norm():
    V = PotentialField(np.array([-3.0, 1.0, 2.0]))
    assert V.sup_norm == 3.0
    with pytest.raises(ValueError):
        PotentialField(np.array([0.0, np.inf]))


def test_weight_function_constraints():
    with pytest.raises(ValueError):
        WeightFunction(np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        StableLyapunov(beta=2.0, theta=0.3, alpha=1.5)  # 2βθ = 1.2 >= 1
    with pytest.raises(ValueError):
        WeightFunction(np.ones(3), {"beta": 1.0, "theta": 0.5, "alpha": 0.8})


def test_stable_lyapunov_is_c2_and_at_least_one():
    ly = StableLyapunov(2.0, 0.2, 1.5)
    r = np.linspace(0, 3, 3001)
    v = ly.radial(r)
    assert v.min() >= 1.0
    eps = 1e-6
    left, right = ly.radial(1 - eps), ly.radial(1 + eps)
    assert abs(left - right) < 1e-5
    d1 = lambda x: (ly.radial(x + eps) - ly.radial(x - eps)) / (2 * eps)  # noqa: E731
    assert d1(1 - 1e-3) == pytest.approx(d1(1 + 1e-3), abs=1e-2)
    assert ly.level_radius(5.0) ** ly.k == pytest.approx(3.0)


# -- generator assembly --------------------------------------------------------


def test_zero_drift_tridiagonal(brownian):
    grid, op = brownian
    h = grid.spacing[0]
    A = op.matrix.toarray()
    n = grid.n
    assert np.allclose(np.diag(A), -1 / h**2, rtol=1e-14)
    assert np.allclose(np.diag(A, 1), 1 / (2 * h * h), rtol=1e-14)
    assert np.allclose(np.diag(A, -1), 1 / (2 * h * h), rtol=1e-14)
    assert np.count_nonzero(A) == 3 * n - 2


def test_constant_vector_killed_near_boundary(quartic_op, rotating_op):
    for op in (quartic_op, rotating_op):
        out = op.apply(np.ones(op.dim))
        assert np.all(out <= 1e-9 * np.abs(op.diagonal))
        layer = op.grid.boundary_layer(1)
        assert np.all(out[layer] < 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.sampled_from(["central", "symmetric"]))
def test_generator_sign_structure(coeffs, scheme):
    a, b, c = coeffs
    U = ScalarField(f"{a}*x + {b}*x**2 + {c}*sin(3*x)")
    grid = GridSpec(DomainSpec(((-1.0, 1.0),)), (60,))
    op = build_generator(OverdampedLangevin(potential=U, scheme=scheme), grid)
    chk = op.check_invariants()
    assert chk["ok"], chk


def test_upwind_fallback_keeps_positivity():
    # strong drift makes central differences non-monotone on a coarse grid
    grid = GridSpec(DomainSpec(((-3.0, 3.0),)), (30,))
    op = build_generator(OverdampedLangevin(drift=VectorField(("-x**3",))), grid)
    assert op.meta["upwind_entries"] > 0
    assert op.check_invariants()["ok"]


def test_negative_rate_rejected():
    from qsdlab.model.generator import _Assembler

    grid = GridSpec(DomainSpec(((0, 1),)), (4,))
    asm = _Assembler(grid)
    with pytest.raises(NonMonotoneScheme):
        asm.add(np.array([1]), -np.ones(grid.n))


def _refinement_error(h):
    U = ScalarField("x**2/2 + sin(x)")
    grid = GridSpec.from_spacing(DomainSpec(((-2.0, 2.0),)), h)
    op = build_generator(OverdampedLangevin(potential=U), grid)
    x = grid.nodes[:, 0]
    psi = np.exp(-4 * x**2) * np.cos(x)
    # exact (1/2) psi'' - U' psi' via sympy
    import sympy as sp

    X = sp.Symbol("x")
    p = sp.exp(-4 * X**2) * sp.cos(X)
    Lpsi = sp.lambdify(X, sp.diff(p, X, 2) / 2 - (X + sp.cos(X)) * sp.diff(p, X))(x)
    inner = np.abs(x) < 1.5  # support of psi is effectively inside D
    return np.max(np.abs(op.apply(psi) - Lpsi)[inner])


def test_central_scheme_second_order():
    e1, e2 = _refinement_error(0.02), _refinement_error(0.01)
    order = np.log2(e1 / e2)
    assert 1.6 <= order <= 2.4, order


def test_symmetric_scheme_detailed_balance():
    U = ScalarField("x**2/2 + x**4/4")
    grid = GridSpec.from_spacing(DomainSpec(((-1.0, 1.5),)), 0.0125)
    op = build_generator(OverdampedLangevin(potential=U, scheme="symmetric"), grid)
    pi = np.exp(-2 * U(grid.nodes))
    F = sps.diags(pi) @ op.matrix
    assert abs(F - F.T).max() <= 1e-14 * abs(F).max()


def test_stable_rows_sum_to_exterior_mass():
    # killing rate of the jump part at x is C((1-x)^-α + (1+x)^-α)/α in the
    # continuum; the lattice value converges at first order away from ∂D
    for a in (0.5, 1.0, 1.5):
        errs = []
        for n in (40, 80, 160):
            grid = GridSpec(DomainSpec(((-1.0, 1.0),)), (n,))
            proc = StableSDE(ScalarField("0"), a)
            op = build_generator(proc, grid)
            x = grid.nodes[:, 0]
            exact = proc.c_alpha * ((1 - x) ** -a + (1 + x) ** -a) / a
            kill = op.killing_rate
            assert np.all(kill >= 0.9 * exact.min())
            inner = np.abs(x) <= 0.5
            errs.append(np.max(np.abs(kill - exact)[inner] / exact[inner]))
        assert errs[-1] < 0.02
        assert errs[0] / errs[1] > 1.6 and errs[1] / errs[2] > 1.6


def test_stable_operator_invariants_2d():
    grid = GridSpec(DomainSpec(((-1.0, 1.0), (-1.0, 1.0))), (16, 16))
    op = build_generator(StableSDE(ScalarField("(x**2 + y**2)/2", 2), 1.2), grid)
    chk = op.check_invariants()
    assert chk["ok"]
    assert np.all(op.row_sums < 0)


def _transport_symmetric_defect(nx):
    proc = KineticLangevin(ScalarField("0"), 1.0)
    dom = kinetic_domain(DomainSpec(((0.0, 1.0),)), 1.0)
    grid = GridSpec(dom, (nx, 40))
    op = build_generator(proc, grid)
    r, c, v = op.row_structure()
    mi = grid.multi_index
    along_x = (r != c) & (mi[r, 1] == mi[c, 1])
    T = sps.coo_matrix((v[along_x], (r[along_x], c[along_x])), shape=(op.dim, op.dim)).tocsr()
    vel = grid.nodes[:, 1]
    T = T - sps.diags(np.abs(vel) / grid.spacing[0])
    S = 0.5 * (T + T.T)
    x = grid.nodes[:, 0]
    psi = np.sin(np.pi * x) ** 4 * np.exp(-vel**2)
    return np.max(np.abs(S @ psi))


def test_kinetic_transport_is_skew_up_to_order_h():
    d1, d2 = _transport_symmetric_defect(100), _transport_symmetric_defect(200)
    assert 1.6 < d1 / d2 < 2.4


def test_kinetic_truncation_reported():
    proc = KineticLangevin(ScalarField("x**2/2"), 2.0)
    dom = kinetic_domain(DomainSpec(((-1.0, 1.0),)), 2.0)
    op = build_generator(proc, GridSpec(dom, (20, 20)))
    assert op.meta["v_max"] == pytest.approx(velocity_cutoff(2.0))
    assert op.meta["velocity_truncation_mass"] == pytest.approx(1e-8, rel=1e-6)
    assert op.check_invariants()["ok"]


def test_export_triplets_round_trip(tmp_path, quartic_op):
    path = tmp_path / "op.csv"
    quartic_op.export_triplets(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    M = sps.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                       shape=quartic_op.matrix.shape)
    assert abs(M - quartic_op.matrix).max() == 0.0


# -- fractional quadrature -----------------------------------------------------


def _free_stencil(alpha, h=2 / 21):
    grid = GridSpec(DomainSpec(((0.0, 10 * h),)), (10,))
    return fractional_quadrature(alpha, stable_constant(1, alpha), grid, 1.0)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_stencil_annihilates_constants_and_odd_functions(alpha):
    st_ = _free_stencil(alpha)
    one = lambda p: np.ones(np.asarray(p).shape[0])  # noqa: E731
    lin = lambda p: np.asarray(p)[:, 0]  # noqa: E731
    assert st_.apply_free(one, np.array([0.3])) == 0.0
    assert abs(st_.apply_free(lin, np.array([0.0]))) < 1e-15


def test_stencil_second_moment_matches_quadrature():
    # stencil square is [-1, 1] exactly for h = 2/21
    alpha = 1.0
    st_ = _free_stencil(alpha)
    assert st_.half_width == pytest.approx(1.0)
    C = stable_constant(1, alpha)
    sq = lambda p: np.asarray(p)[:, 0] ** 2  # noqa: E731
    ref = 2 * integrate.quad(lambda z: z * z * C * z ** (-1 - alpha), 0, 1, epsrel=1e-13)[0]
    assert st_.apply_free(sq, np.array([0.0])) == pytest.approx(ref, rel=1e-6)


def test_stencil_weights_symmetric():
    grid = GridSpec(DomainSpec(((-1.0, 1.0), (-1.0, 1.0))), (10, 10))
    st_ = fractional_quadrature(1.3, 1.0, grid, grid.domain.diameter)
    lookup = {tuple(k): w for k, w in zip(st_.offsets, st_.weights)}
    for k, w in lookup.items():
        assert lookup[tuple(-np.array(k))] == pytest.approx(w, rel=1e-14)


def test_central_cell_and_tail_closed_forms():
    C, a, h = 0.7, 1.3, 0.1
    m_ref = 2 * integrate.quad(lambda z: z * z * C * z ** (-1 - a), 0, h / 2)[0]
    assert central_cell_moment(a, C, h, 1) == pytest.approx(m_ref, rel=1e-10)
    t_ref = 2 * integrate.quad(lambda z: C * z ** (-1 - a), 2.0, np.inf)[0]
    assert square_tail_mass(a, C, 2.0, 1) == pytest.approx(t_ref, rel=1e-10)
    # 2D: mass of C|z|^{-2-α} outside the square [-A, A]^2 by polar quadrature
    A = 1.5
    ang = integrate.quad(lambda t: (A / np.cos(t)) ** (-a), 0, np.pi / 4)[0]
    assert square_tail_mass(a, C, A, 2) == pytest.approx(8 * C / a * ang, rel=1e-10)


# -- Lyapunov checker ----------------------------------------------------------


def test_lyapunov_cubic_drift_matches_symbolic_ratio():
    grid = GridSpec.from_spacing(DomainSpec(((-3.0, 3.0),)), 0.01)
    op = build_generator(OverdampedLangevin(drift=VectorField(("-x**3",))), grid)
    a = 1.0
    x = grid.nodes[:, 0]
    W = WeightFunction(np.exp(a * np.abs(x)))
    rep = lyapunov_check(op, W, 1.5, [0.5, 1.0, 1.5, 2.0])
    assert rep.increasing and rep.success
    # -L W^p / W^p = p a |x|^3 - (p a)^2 / 2 for x away from 0 and ∂D
    p = 1.5
    ratio = -op.apply(W.values**p) / W.values**p
    sel = (np.abs(x) > 0.5) & (np.abs(x) < 2.5)
    sym = p * a * np.abs(x[sel]) ** 3 - (p * a) ** 2 / 2
    # O(h²) truncation error of the central scheme
    assert np.max(np.abs(ratio[sel] - sym)) < 1e-3


def test_lyapunov_constant_weight_fails():
    grid = GridSpec.from_spacing(DomainSpec(((-3.0, 3.0),)), 0.05)
    op = build_generator(OverdampedLangevin(drift=VectorField(("-x**3",))), grid)
    rep = lyapunov_check(op, WeightFunction.ones(grid.n), 2.0, [0.5, 1.0, 1.5, 2.0])
    assert not rep.success
    assert np.all(rep.r <= op.killing_rate.max() + 1e-12)


def test_lyapunov_stable_ratio_slope():
    # normalised ratio grows like |x|^(2β-2) for the quartic potential (β = 2)
    grid = GridSpec.from_spacing(DomainSpec(((-8.0, 8.0),)), 0.02)
    op = build_generator(StableSDE(ScalarField("1 + x**4/4"), 1.5), grid)
    ly = StableLyapunov(2.0, 0.2, 1.5)
    rep = lyapunov_check(op, ly.weight(grid.nodes[:, 0]), 2.0, [1.5, 2.0, 2.5, 3.0, 3.5, 4.0])
    assert rep.increasing
    assert rep.slope_ratio == pytest.approx(2.0, rel=0.15)
