"""Feynman-Kac semigroup action and its principal eigentriple."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from qsdlab.errors import SlowConvergence
from qsdlab.model.fields import PotentialField, WeightFunction
from qsdlab.spectral.krylov import expv

DENSE_MAX = 1500


def _potential_values(V, n: int) -> np.ndarray:
    if V is None:
        return np.zeros(n)
    vals = V.values if isinstance(V, PotentialField) else np.asarray(V, dtype=float)
    if vals.shape != (n,):
        raise ValueError(f"potential has {vals.size} values, operator has {n} rows")
    return vals


def _weights(W, n: int) -> np.ndarray:
    if W is None:
        return np.ones(n)
    w = W.values if isinstance(W, WeightFunction) else np.asarray(W, dtype=float)
    if w.shape != (n,):
        raise ValueError("weight function does not match the operator")
    return w


def shifted_matrix(op, V) -> tuple[sps.csr_matrix, float]:
    """Return (L + V - max V, max V).

    Subtracting the maximum keeps exp(t A) bounded by one and makes the
    result exactly invariant under V -> V + c up to the rounding of max V.
    """
    vals = _potential_values(V, op.dim)
    vmax = float(vals.max())
    A = (op.matrix + sps.diags(vals - vmax)).tocsr()
    return A, vmax


def semigroup_apply(op, V, f, t: float, tol: float = 1e-12) -> np.ndarray:
    """exp(t (L_D + V)) f."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("f must be finite")
    if t == 0:
        return f.copy()
    A, vmax = shifted_matrix(op, V)
    out = expv(A, f, t, tol=tol) * np.exp(vmax * t)
    if np.all(f >= 0):
        # the exact result is nonnegative; remove round-off of size tol
        np.maximum(out, 0.0, out=out)
    return out


@dataclass
class EigenTriple:
    """(Λ, μ, φ) with Σμ = 1 and μ(φ) = 1."""

    lam: float
    mu: np.ndarray
    phi: np.ndarray
    tau: float = float("nan")
    iterations: int = 0
    residual_right: float = float("nan")
    residual_left: float = float("nan")
    lam_right: float = float("nan")
    lam_left: float = float("nan")
    info: dict = field(default_factory=dict)

    def check(self, vmax: float | None = None) -> dict:
        out = {
            "mu_sums_to_one": abs(self.mu.sum() - 1.0) <= 1e-10,
            "mu_positive": bool(np.all(self.mu > 0)),
            "phi_positive": bool(np.all(self.phi > 0)),
            "normalised": abs(float(self.mu @ self.phi) - 1.0) <= 1e-10,
        }
        if vmax is not None:
            out["below_sup"] = self.lam < vmax
        return out


class _Propagator:
    """Time-tau semigroup of the shifted matrix, dense when small."""

    def __init__(self, A, tau: float, dense_max: int, tol: float):
        self.A = A
        self.tau = tau
        self.tol = tol
        self.dense = A.shape[0] <= dense_max
        if self.dense:
            self.E = sla.expm(tau * A.toarray())

    def double(self):
        self.tau *= 2.0
        if self.dense:
            E = self.E @ self.E
            # rescaling changes no eigenvector and avoids underflow for large tau
            self.E = E / np.abs(E).max()

    def right(self, f):
        return self.E @ f if self.dense else expv(self.A, f, self.tau, tol=self.tol)

    def left(self, g):
        return self.E.T @ g if self.dense else expv(self.A.T.tocsr(), g, self.tau, tol=self.tol)


def principal_eigentriple(op, V=None, W=None, tol: float = 1e-10, *, max_iter: int = 2000,
                          max_doublings: int = 60, init=None, tau: float | None = None,
                          dense_max: int = DENSE_MAX) -> EigenTriple:
    """Power iteration on P_tau = exp(tau (L_D + V)), run on the right and the left.

    tau starts at 1 / (2 max|diag|) and doubles whenever the residual
    contracts by less than a factor 2 per iteration, so slowly mixing
    operators still converge in a bounded number of products.  ``init`` is an
    optional (mu, phi) warm start and ``tau`` a starting time step.

    Λ is recovered from the two-sided Rayleigh quotient μ(Aφ)/μ(φ) of the
    generator, which is accurate to the square of the eigenvector error.
    """
    n = op.dim
    A, vmax = shifted_matrix(op, V)
    w = _weights(W, n)
    wnorm = lambda f: float(np.max(np.abs(f) / w))  # noqa: E731
    diag = np.abs(A.diagonal())
    if n == 1:
        a = float(A[0, 0])
        one = np.ones(1)
        return EigenTriple(lam=a + vmax, mu=one.copy(), phi=one.copy(), tau=0.0,
                           residual_right=0.0, residual_left=0.0, lam_right=a + vmax,
                           lam_left=a + vmax)
    tau0 = tau if tau is not None else 1.0 / (2.0 * max(float(diag.max()), 1e-300))
    prop = _Propagator(A, tau0, dense_max, tol=min(1e-13, tol * 1e-3))
    if init is not None:
        mu, phi = (np.asarray(v, dtype=float).copy() for v in init)
    else:
        mu, phi = np.ones(n), np.ones(n)
    phi /= wnorm(phi)
    mu /= mu.sum()
    prev = np.inf
    doublings = 0
    res_r = res_l = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Pphi = prop.right(phi)
        Pmu = prop.left(mu)
        rho_r = float(mu @ Pphi) / float(mu @ phi)
        rho_l = float(Pmu @ phi) / float(mu @ phi)
        res_r = wnorm(Pphi - rho_r * phi) / (rho_r * wnorm(phi))
        res_l = float(np.abs(Pmu - rho_l * mu).sum()) / (rho_l * float(np.abs(mu).sum()))
        res = max(res_r, res_l)
        phi = Pphi / wnorm(Pphi)
        mu = Pmu / Pmu.sum()
        if res <= tol:
            break
        if res > 0.5 * prev and doublings < max_doublings:
            prop.double()
            doublings += 1
            prev = np.inf
            continue
        prev = res
    else:
        partial = _finish(A, vmax, mu, phi, prop.tau, it, res_r, res_l)
        raise SlowConvergence(
            f"power iteration stopped at residual {max(res_r, res_l):.3e} > {tol:.1e}",
            partial=partial,
        )
    return _finish(A, vmax, mu, phi, prop.tau, it, res_r, res_l)


def generator_action(A, f) -> np.ndarray:
    """A f computed as Σ_j A_ij (f_j − f_i) + (Σ_j A_ij) f_i.

    For generator-like matrices the off-diagonal rates are O(1/h²) while
    A f is O(1); differencing first loses far less to cancellation.
    """
    A = sps.csr_matrix(A)
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    diff = A.data * (f[A.indices] - f[rows])
    out = np.bincount(rows, weights=diff, minlength=A.shape[0])
    return out + np.asarray(A.sum(axis=1)).reshape(-1) * f


def _finish(A, vmax, mu, phi, tau, it, res_r, res_l) -> EigenTriple:
    phi = np.maximum(phi, 0.0)
    mu = np.maximum(mu, 0.0)
    mu = mu / mu.sum()
    phi = phi / float(mu @ phi)
    Aphi = generator_action(A, phi)
    lam = vmax + float(mu @ Aphi) / float(mu @ phi)
    # one-sided estimates, each using a single eigenvector: 1(Aφ)/1(φ) and μ(A1)/μ(1)
    lam_right = vmax + float(Aphi.sum()) / float(phi.sum())
    lam_left = vmax + float(mu @ (A @ np.ones_like(mu)))
    return EigenTriple(lam=lam, mu=mu, phi=phi, tau=tau, iterations=it,
                       residual_right=float(res_r), residual_left=float(res_l),
                       lam_right=lam_right, lam_left=lam_left)


def rayleigh_residuals(op, V, triple: EigenTriple, W=None, t: float | None = None) -> dict:
    """Residuals |P_t φ - e^{Λt} φ|_W / (e^{Λt}|φ|_W) and the L1 analogue for μ."""
    n = op.dim
    w = _weights(W, n)
    t = triple.tau if t is None or not np.isfinite(t) else t
    if not t or not np.isfinite(t):
        t = 1.0
    g = np.exp(triple.lam * t)
    Pphi = semigroup_apply(op, V, triple.phi, t)
    A, vmax = shifted_matrix(op, V)
    Pmu = expv(A.T.tocsr(), triple.mu, t) * np.exp(vmax * t)
    r = float(np.max(np.abs(Pphi - g * triple.phi) / w)) / (g * float(np.max(np.abs(triple.phi) / w)))
    l = float(np.abs(Pmu - g * triple.mu).sum()) / g
    return {"t": t, "right": r, "left": l}
