"""Measured exponential-convergence constants and survival decay rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qsdlab.errors import NoLinearRegime
from qsdlab.spectral.eigen import EigenTriple, _weights, shifted_matrix
from qsdlab.spectral.krylov import expv


@dataclass(frozen=True)
class WeightedNorm:
    """|f|_W = max_i |f_i| / W_i."""

    W: np.ndarray

    def __call__(self, f) -> float:
        return float(np.max(np.abs(np.asarray(f)) / self.W))


@dataclass
class GapEstimate:
    delta: float
    C: float
    fit_window: tuple[float, float]
    times: np.ndarray = field(repr=False, default=None)
    residuals: np.ndarray = field(repr=False, default=None)  # (n_probes, n_times)
    per_probe_delta: list = field(default_factory=list)

    def bound(self, t):
        return self.C * np.exp(-self.delta * np.asarray(t))

    def dominates(self) -> bool:
        lo, hi = self.fit_window
        sel = (self.times >= lo) & (self.times <= hi)
        b = self.bound(self.times[sel])
        return bool(np.all(self.residuals[:, sel] <= b * (1 + 1e-12)))


def time_grid(horizon: float, n_log: int = 40, n_lin: int = 81) -> np.ndarray:
    t = np.concatenate([[0.0], np.geomspace(1e-3 * horizon, horizon, n_log),
                        np.linspace(0.0, horizon, n_lin)])
    return np.unique(np.round(t, 14))


def _propagate(A, f, times, tol):
    """Vectors exp(t_j A) f for increasing t_j, each renormalised.

    Returns the unit-norm vectors and the accumulated log scale, so that the
    unscaled value is exp(logscale_j) * vec_j.
    """
    out, logs = [], []
    cur = np.asarray(f, dtype=float).copy()
    log_scale = 0.0
    t_prev = 0.0
    for t in times:
        if t > t_prev:
            cur = expv(A, cur, t - t_prev, tol=tol)
        s = float(np.max(np.abs(cur)))
        if s > 0:
            cur = cur / s
            log_scale += np.log(s)
        out.append(cur.copy())
        logs.append(log_scale)
        t_prev = t
    return np.array(out), np.array(logs)


def find_linear_window(t, y, max_dev: float, min_span: float = 0.0, min_points: int = 5):
    """Earliest start index s such that y[s:] is within ``max_dev`` of its least-squares line.

    Returns (s, slope, intercept) or None.  ``min_span`` is the minimum
    required drop of the fitted line across the window.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = t.size
    for s in range(0, n - min_points + 1):
        tt, yy = t[s:], y[s:]
        slope, icpt = np.polyfit(tt, yy, 1)
        dev = np.max(np.abs(yy - (slope * tt + icpt)))
        if dev <= max_dev and abs(slope) * (tt[-1] - tt[0]) >= min_span:
            return s, float(slope), float(icpt)
    return None


def decay_residuals(op, V, W, triple: EigenTriple, f, times, tol: float = 1e-13) -> np.ndarray:
    """rho_f(t) = |e^{-Λt} P_t f - μ(f) φ|_W / |f|_W at increasing ``times``."""
    norm = WeightedNorm(_weights(W, op.dim))
    A, vmax = shifted_matrix(op, V)
    shift = triple.lam - vmax
    f = np.asarray(f, dtype=float)
    fn = norm(f)
    if fn == 0:
        raise ValueError("zero probe")
    times = np.asarray(times, dtype=float)
    vecs, logs = _propagate(A, f, times, tol)
    mf = float(triple.mu @ f)
    rho = np.empty(times.size)
    for j, t in enumerate(times):
        rho[j] = norm(vecs[j] * np.exp(logs[j] - shift * t) - mf * triple.phi) / fn
    return rho


def gap_estimate(op, V, W, triple: EigenTriple, probes, horizon: float, *,
                 floor: float = 1e-8, min_decades: float = 2.0, max_dev: float = 0.05,
                 tol: float = 1e-13) -> GapEstimate:
    """Fit rho_f(t) = |e^{-Λt} P_t f - μ(f) φ|_W / |f|_W <= C e^{-δt}.

    δ is the smallest fitted decay rate over the probes (slowest mode wins);
    C is the smallest constant >= 1 making the bound dominate every measured
    sample on the fit window.  Samples below ``floor`` are treated as
    numerical noise and excluded from the fits.
    """
    times = time_grid(horizon)
    resid = []
    deltas = []
    windows = []
    for f in probes:
        rho = decay_residuals(op, V, W, triple, f, times, tol)
        resid.append(rho)
        ok = rho > floor
        if ok.sum() < 5:
            deltas.append(np.inf)
            continue
        # use the contiguous prefix above the floor
        last = int(np.argmin(ok)) if not ok.all() else times.size
        tt, yy = times[:last], np.log(rho[:last])
        win = find_linear_window(tt, yy, max_dev, min_span=min_decades * np.log(10.0))
        if win is None:
            deltas.append(np.nan)
            continue
        s, slope, _ = win
        deltas.append(-slope)
        windows.append((tt[s], tt[-1]))
    resid = np.array(resid)
    finite = [d for d in deltas if np.isfinite(d)]
    if not finite or not windows:
        raise NoLinearRegime("no probe shows a log-linear decay window above the numerical floor")
    if any(np.isnan(d) for d in deltas):
        raise NoLinearRegime("a probe decays without a log-linear window of the required span")
    delta = float(min(finite))
    lo = min(wd[0] for wd in windows)
    hi = max(wd[1] for wd in windows)
    sel = (times >= lo) & (times <= hi)
    C = float(max(1.0, np.max(resid[:, sel] * np.exp(delta * times[sel]))))
    return GapEstimate(delta=delta, C=C, fit_window=(float(lo), float(hi)), times=times,
                       residuals=resid, per_probe_delta=[float(d) for d in deltas])


def survival_curve(op, x0: int, times, V=None, tol: float = 1e-13) -> np.ndarray:
    """log (P_t^{D,V} 1)(x0) at the given increasing times."""
    A, vmax = shifted_matrix(op, V)
    vecs, logs = _propagate(A, np.ones(op.dim), times, tol)
    with np.errstate(divide="ignore"):
        return np.log(vecs[:, x0]) + logs + vmax * np.asarray(times)


def survival_decay(op, x0: int, horizon: float, *, n_times: int = 81,
                   max_dev: float = 1e-6, return_fit: bool = False):
    """Slope of t -> log (P_t^D 1)(x0) on its late linear regime."""
    if not 0 <= x0 < op.dim:
        raise ValueError("x0 must index an interior node")
    times = np.linspace(0.0, horizon, n_times)
    y = survival_curve(op, x0, times)
    ok = np.isfinite(y)
    times, y = times[ok], y[ok]
    # tolerance scales with the size of the values being fitted
    dev = max_dev * (1.0 + np.abs(y).max())
    win = find_linear_window(times, y, dev, min_points=max(5, times.size // 4))
    if win is None:
        raise NoLinearRegime("log survival has no linear regime on the horizon")
    s, slope, icpt = win
    if return_fit:
        return slope, {"window": (float(times[s]), float(times[-1])), "intercept": icpt,
                       "times": times, "log_survival": y}
    return slope
