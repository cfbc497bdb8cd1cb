"""Action of a matrix exponential on a vector by restarted Arnoldi stepping.

The step-size control follows the usual Krylov time-stepping recipe: on each
sub-interval an m-dimensional Arnoldi basis is built, the small exponential
is taken of the augmented Hessenberg matrix, and the two leading correction
terms give a local error estimate that decides acceptance and the next step.
"""

from __future__ import annotations

from math import e, log10, pi, sqrt

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from qsdlab.errors import NonConvergence


def _round2(x: float) -> float:
    """Round to two significant digits, rounding up."""
    if x <= 0 or not np.isfinite(x):
        return x
    s = 10.0 ** (np.floor(log10(x)) - 1)
    return float(np.ceil(x / s) * s)


def inf_norm(A) -> float:
    if sps.issparse(A):
        return float(abs(A).sum(axis=1).max()) if A.shape[0] else 0.0
    return float(np.abs(A).sum(axis=1).max()) if A.shape[0] else 0.0


def expv(A, v: np.ndarray, t: float, tol: float = 1e-12, m: int = 30,
         max_rejections: int = 200) -> np.ndarray:
    """Return exp(t A) v.

    ``A`` is a dense array or scipy sparse matrix.  The accepted local error on
    a step of length dt is at most 1.2 * (dt / t) * tol * |w| where w is the
    current iterate, so the global relative error is of order ``tol``.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if t < 0:
        raise ValueError("negative time")
    if t == 0 or n == 0:
        return v.copy()
    anorm = inf_norm(A)
    beta = float(np.linalg.norm(v))
    if beta == 0.0:
        return np.zeros_like(v)
    if anorm == 0.0:
        return v.copy()
    m = max(1, min(m, n))
    btol = 1e-14 * anorm
    delta, gamma = 1.2, 0.9
    xm = 1.0 / m
    fact = ((m + 1) / e) ** (m + 1) * sqrt(2 * pi * (m + 1))
    t_step = _round2((1.0 / anorm) * ((fact * tol) / (4.0 * beta * anorm)) ** xm)
    t_now = 0.0
    w = v.copy()
    rejections = 0
    V = np.empty((n, m + 1))
    while t_now < t:
        t_step = min(t - t_now, t_step)
        H = np.zeros((m + 2, m + 2))
        V[:, 0] = w / beta
        happy = False
        mj = m
        for j in range(m):
            p = A @ V[:, j]
            # classical Gram-Schmidt, applied twice for stability
            h1 = V[:, : j + 1].T @ p
            p = p - V[:, : j + 1] @ h1
            h2 = V[:, : j + 1].T @ p
            p = p - V[:, : j + 1] @ h2
            H[: j + 1, j] = h1 + h2
            s = float(np.linalg.norm(p))
            if s < btol:
                happy = True
                mj = j + 1
                break
            H[j + 1, j] = s
            V[:, j + 1] = p / s
        if happy:
            F = sla.expm(t_step * H[:mj, :mj])
            w = beta * (V[:, :mj] @ F[:, 0])
            t_now += t_step
            beta = float(np.linalg.norm(w))
            if beta == 0.0:
                return w
            t_step = t - t_now if t_now < t else t_step
            continue
        H[m + 1, m] = 1.0
        avnorm = float(np.linalg.norm(A @ V[:, m]))
        while True:
            F = sla.expm(t_step * H)
            err1 = abs(beta * F[m, 0])
            err2 = abs(beta * F[m + 1, 0] * avnorm)
            if err1 > 10.0 * err2:
                err_loc = err2
            elif err1 > err2:
                err_loc = err1 * err2 / (err1 - err2)
            else:
                err_loc = err1
            allowed = delta * (t_step / t) * tol * beta
            if err_loc <= allowed:
                break
            rejections += 1
            if rejections > max_rejections:
                raise NonConvergence("Krylov step size failed to contract the error estimate")
            t_step = _round2(gamma * t_step * (allowed / err_loc) ** xm)
            if t_step <= 0 or not np.isfinite(t_step):
                raise NonConvergence("Krylov step size collapsed")
        w = V @ (beta * F[: m + 1, 0])
        t_now += t_step
        beta = float(np.linalg.norm(w))
        if beta == 0.0:
            return w
        err_loc = max(err_loc, 1e-300)
        grow = gamma * (allowed / err_loc) ** xm
        t_step = _round2(t_step * min(grow, 5.0))
    return w

