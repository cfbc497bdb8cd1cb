"""Single-step integrators in vectorised numpy form.

These are the reference versions of the updates performed inside the path
kernels; they take any object with ``normal``, ``uniform``,
``exponential`` and ``positive_stable`` draw methods (e.g. ``CounterRNG``).
"""

from __future__ import annotations

import numpy as np

from qsdlab.errors import AlphaOutOfRange
from qsdlab.model.process import KineticLangevin, OverdampedLangevin, stable_constant


def _as_states(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and x.size == dim
    return np.atleast_2d(x).reshape(-1, dim), single


def step_overdamped(process: OverdampedLangevin, x, dt: float, rng):
    """Euler-Maruyama: x' = x + c(x) dt + sqrt(dt) N(0, I)."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    X, single = _as_states(x, process.dim)
    if dt == 0:
        return X[0].copy() if single else X.copy()
    noise = rng.normal(X.size).reshape(X.shape)
    out = X + process.drift_field(X) * dt + np.sqrt(dt) * noise
    return out[0] if single else out


def step_kinetic(process: KineticLangevin, x, v, dt: float, rng):
    """dx = v dt, dv = (-grad U(x) - gamma v) dt + dB, explicit Euler in both."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    d = process.dim
    X, single = _as_states(x, d)
    Vv, _ = _as_states(v, d)
    if dt == 0:
        return (X[0].copy(), Vv[0].copy()) if single else (X.copy(), Vv.copy())
    noise = rng.normal(Vv.size).reshape(Vv.shape)
    gradU = process.potential.gradient(X)
    x_new = X + Vv * dt
    v_new = Vv + (-gradU - process.gamma * Vv) * dt + np.sqrt(dt) * noise
    if single:
        return x_new[0], v_new[0]
    return x_new, v_new


def stable_increment(alpha: float, dt: float, dim: int, rng, size: int | None = None,
                     c_alpha: float | None = None):
    """Increment over time dt of the rotationally invariant alpha-stable process.

    Gaussian subordination: dt^(1/alpha) * sigma * sqrt(2 S) * N(0, I) with S
    positive (alpha/2)-stable, E exp(-lam S) = exp(-lam^(alpha/2)).  With
    sigma = 1 the process has E exp(i xi.L_t) = exp(-t |xi|^alpha), whose Lévy
    density constant is ``stable_constant(dim, alpha)``; another ``c_alpha``
    rescales sigma^alpha by c_alpha / stable_constant(dim, alpha).
    """
    if not 0.0 < alpha < 2.0:
        raise AlphaOutOfRange(f"alpha must lie in (0, 2), got {alpha}")
    m = 1 if size is None else int(size)
    sigma = 1.0
    if c_alpha is not None:
        sigma = (c_alpha / stable_constant(dim, alpha)) ** (1.0 / alpha)
    S = rng.positive_stable(alpha / 2.0, m)
    G = rng.normal(m * dim).reshape(m, dim)
    out = (dt ** (1.0 / alpha) * sigma) * np.sqrt(2.0 * S)[:, None] * G
    return out[0] if size is None else out
