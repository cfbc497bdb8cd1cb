"""Numerical check of the drift inequality -L W^p >= r_n W^p - b_n 1_{K_n}."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qsdlab.model.fields import StableLyapunov, WeightFunction
from qsdlab.model.fractional import fractional_quadrature
from qsdlab.model.process import StableSDE


@dataclass
class LyapunovReport:
    radii: np.ndarray | None
    r: np.ndarray  # min over cells outside K_n of -L W^p / W^p
    b: np.ndarray  # max over K_n of (r_n W^p + L W^p)_+
    drift: np.ndarray  # min over cells outside K_n of -L W^p
    increasing: bool
    success: bool
    slope_ratio: float | None = None  # log-log slope of r_n against the radius
    slope_drift: float | None = None  # same for the unnormalised drift
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "r": self.r.tolist(),
            "b": self.b.tolist(),
            "drift": self.drift.tolist(),
            "increasing": self.increasing,
            "success": self.success,
            "slope_ratio": self.slope_ratio,
            "slope_drift": self.slope_drift,
        }
        if self.radii is not None:
            out["radii"] = self.radii.tolist()
        return out


def _loglog_slope(x, y) -> float | None:
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def lyapunov_check(op, W: WeightFunction, p: float, compacts, center=None) -> LyapunovReport:
    """Evaluate the drift inequality on the grid.

    ``compacts`` is either a sequence of radii (K_n = ball around ``center``)
    or a sequence of boolean masks over interior nodes, increasing in n.
    Success means r_n is strictly increasing over the supplied sets; growth
    without bound cannot be certified from finitely many sets, so the log-log
    slopes are reported alongside.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    Wp = W.values**p
    LWp = op.apply(Wp)
    ratio = -LWp / Wp
    nodes = op.nodes
    radii = None
    comp = list(compacts)
    if comp and np.ndim(comp[0]) == 0:
        radii = np.asarray(comp, dtype=float)
        c = np.zeros(nodes.shape[1]) if center is None else np.asarray(center, dtype=float)
        dist = np.linalg.norm(nodes - c, axis=1)
        masks = [dist <= rho for rho in radii]
    else:
        masks = [np.asarray(m, dtype=bool) for m in comp]
    r, b, drift = [], [], []
    notes = []
    for k, K in enumerate(masks):
        outside = ~K
        if not outside.any():
            notes.append(f"K_{k} covers the whole grid")
            r.append(np.inf)
            drift.append(np.inf)
            b.append(0.0)
            continue
        rn = float(ratio[outside].min())
        r.append(rn)
        drift.append(float((-LWp)[outside].min()))
        b.append(float(np.max(np.maximum(rn * Wp[K] + LWp[K], 0.0))) if K.any() else 0.0)
    r, b, drift = np.array(r), np.array(b), np.array(drift)
    finite = np.isfinite(r)
    increasing = bool(finite.sum() >= 2 and np.all(np.diff(r[finite]) > 0))
    rep = LyapunovReport(radii=radii, r=r, b=b, drift=drift, increasing=increasing,
                         success=increasing, notes=notes)
    if radii is not None:
        rep.slope_ratio = _loglog_slope(radii, r)
        rep.slope_drift = _loglog_slope(radii, drift)
    return rep


def free_generator_values(process: StableSDE, lyap: StableLyapunov, xs, h: float,
                          reach: float) -> np.ndarray:
    """Upper estimates of the whole-space generator applied to the stable
    Lyapunov function at the 1D points ``xs``.

    Jumps up to ``reach`` use the lattice quadrature with spacing ``h``;
    beyond that the increment is bounded by 3 + |x|^k + |z|^k - V(x), using
    subadditivity of r -> r^k for k < 1, and integrated in closed form.
    """
    from qsdlab.model.domain import DomainSpec, GridSpec

    if process.dim != 1:
        raise ValueError("whole-space evaluation is implemented in 1D")
    box = GridSpec.from_spacing(DomainSpec(((-reach / 2, reach / 2),)), h)
    st = fractional_quadrature(process.alpha, process.c_alpha, box, reach)
    k, a, C, al = lyap.k, st.half_width, process.c_alpha, process.alpha
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    psi = lambda pts: lyap(np.asarray(pts).reshape(-1))  # noqa: E731
    out = np.empty(xs.size)
    for i, x in enumerate(xs):
        jump = st.apply_free(psi, np.array([x]))
        r = abs(x)
        if r < 1.0:
            dV = np.sign(x) * (2 * lyap.b * r + 4 * lyap.c * r**3)
        else:
            dV = np.sign(x) * k * r ** (k - 1.0)
        drift = -process.potential.gradient(np.array([[x]]))[0, 0] * dV
        c0 = max(0.0, 3.0 + r**k - float(lyap(np.array([x]))[0]))
        tail = 2.0 * C * (c0 * a ** (-al) / al + a ** (k - al) / (al - k))
        out[i] = drift + jump + tail
    return out


def growth_constant(process: StableSDE, lyap: StableLyapunov, span: float = 8.0,
                    h: float = 0.01, reach: float = 200.0, n_points: int = 801) -> float:
    """c_1 with L V <= c_1 V on the real line, maximised over a point grid.

    Outside ``[-span, span]`` the drift dominates and L V is negative for the
    potentials used here; the returned value is the maximum of L V / V over
    the sampled points, floored at a small positive number.
    """
    xs = np.linspace(-span, span, n_points)
    vals = free_generator_values(process, lyap, xs, h, reach)
    return float(max(np.max(vals / lyap(xs)), 1e-12))
