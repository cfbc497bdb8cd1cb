"""Cramér functional Λ_D(V) − Λ_D(0), quasi-ergodic distributions and their derivative identity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qsdlab.errors import DerivativeMismatch
from qsdlab.model.fields import PotentialField
from qsdlab.spectral.eigen import EigenTriple, principal_eigentriple


def _values(V, n: int | None = None) -> np.ndarray:
    v = V.values if isinstance(V, PotentialField) else np.asarray(V, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    if n is not None and v.size != n:
        raise ValueError(f"potential has {v.size} values, operator has {n} rows")
    if not np.all(np.isfinite(v)):
        raise ValueError("potential must be bounded")
    return v


@dataclass(frozen=True)
class QuasiErgodicDistribution:
    """Cell masses φ_i μ_i / Σ φ μ over interior nodes."""

    masses: np.ndarray

    def __call__(self, V) -> float:
        return float(self.masses @ _values(V, self.masses.size))

    @property
    def bin_masses(self) -> np.ndarray:
        return self.masses


def qed(triple: EigenTriple) -> QuasiErgodicDistribution:
    p = np.asarray(triple.phi, dtype=float) * np.asarray(triple.mu, dtype=float)
    return QuasiErgodicDistribution(p / p.sum())


class CramerFunctional:
    """V -> Λ_D(V) − Λ_D(0) on a fixed operator.

    Eigentriples are cached by the bytes of V, and every solve is warm
    started from the triple at V = 0 so nearby potentials reuse its
    eigenvectors and time step.
    """

    def __init__(self, op, tol: float = 1e-11, cache_size: int = 64):
        self.op = op
        self.tol = tol
        self._cache: dict[bytes, EigenTriple] = {}
        self._order: list[bytes] = []
        self._cache_size = cache_size
        self.base = self.triple(np.zeros(op.dim))
        self.reference_lambda0 = self.base.lam

    def triple(self, V, warm: EigenTriple | None = None) -> EigenTriple:
        v = _values(V, self.op.dim)
        key = v.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        warm = warm if warm is not None else getattr(self, "base", None)
        kw = {}
        if warm is not None:
            kw = {"init": (warm.mu, warm.phi), "tau": warm.tau}
        t = principal_eigentriple(self.op, v, tol=self.tol, **kw)
        self._cache[key] = t
        self._order.append(key)
        if len(self._order) > self._cache_size:
            self._cache.pop(self._order.pop(0), None)
        return t

    def log_spectral_radius(self, V, warm: EigenTriple | None = None) -> float:
        return self.triple(V, warm).lam

    def __call__(self, V, warm: EigenTriple | None = None) -> float:
        return self.triple(V, warm).lam - self.reference_lambda0

    def qed(self, V=None) -> QuasiErgodicDistribution:
        return qed(self.base if V is None else self.triple(V))


def cramer(op, V, tol: float = 1e-11) -> float:
    """Λ_D(V) − Λ_D(0), both from principal_eigentriple at the same tolerance."""
    v = _values(V, op.dim)
    lam_v = principal_eigentriple(op, v, tol=tol).lam
    lam_0 = principal_eigentriple(op, None, tol=tol).lam
    return lam_v - lam_0


def central_difference(F: CramerFunctional, V0, V1, t: float = 1e-5) -> float:
    v0 = _values(V0, F.op.dim)
    v1 = _values(V1, F.op.dim)
    warm = F.triple(v0)
    up = F.log_spectral_radius(v0 + t * v1, warm)
    dn = F.log_spectral_radius(v0 - t * v1, warm)
    return (up - dn) / (2.0 * t)


def gateaux(F: CramerFunctional, V0, V1, *, t: float = 1e-5, rtol: float = 1e-6,
            check: bool = True) -> float:
    """π_{D,V0}(V1), the derivative of Λ_D at V0 in direction V1.

    With ``check`` the value is compared with a central difference of step
    ``t`` and ``DerivativeMismatch`` is raised when they differ by more than
    ``rtol`` relative.
    """
    v1 = _values(V1, F.op.dim)
    g = F.qed(_values(V0, F.op.dim))(v1)
    if check:
        fd = central_difference(F, V0, v1, t)
        scale = max(abs(g), abs(fd), 1e-12 * max(float(np.abs(v1).max()), 1e-300))
        if abs(g - fd) > rtol * scale:
            raise DerivativeMismatch(
                f"q.e.d. integral {g:.12g} vs central difference {fd:.12g} "
                f"(relative {abs(g - fd) / scale:.2e} > {rtol:.0e})")
    return g
