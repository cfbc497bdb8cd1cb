"""Lattice quadrature of the stable jump integral.

For the Lévy measure F(dz) = C |z|^(-d-alpha) dz the lattice is partitioned
into cells z in kh + [-h/2, h/2]^d.  Each cell k != 0 becomes a jump of size
kh whose weight matches the cell's second moment,

    w_k = ∫_cell_k |z|^2 F(dz) / |kh|^2,

so the stencil integrates quadratics exactly.  The central cell is folded
into a local diffusion (m/2) Δ with m = ∫_cell_0 z_1^2 F(dz).  Everything
beyond the outermost cell is a closed-form tail mass.  Odd moments cancel
because w_k = w_-k, so the compensator term drops out.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np
from scipy import integrate

from qsdlab.errors import AlphaOutOfRange

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class JumpStencil:
    offsets: np.ndarray  # (K, d) integer lattice offsets, origin excluded
    weights: np.ndarray  # (K,) jump rates
    local_diffusion: float  # m: the central cell contributes (m/2) Δ
    tail_mass: float  # F-mass outside the outermost stencil cell
    spacing: np.ndarray
    alpha: float
    c_alpha: float

    @property
    def dim(self) -> int:
        return self.offsets.shape[1]

    @property
    def half_width(self) -> float:
        """Half-width (in state units) of the square covered by the stencil."""
        return float((np.abs(self.offsets).max() + 0.5) * self.spacing[0])

    def apply_free(self, psi, x) -> float:
        """Truncated operator applied to a callable on the unbounded lattice.

        Jumps beyond the stencil are ignored, so this is the generator of the
        Lévy measure restricted to the stencil square.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h = self.spacing
        px = float(np.asarray(psi(x[None, :])).reshape(-1)[0])
        targets = x[None, :] + self.offsets * h
        jump = float(np.dot(self.weights, np.asarray(psi(targets)).reshape(-1) - px))
        lap = 0.0
        for a in range(self.dim):
            e = np.zeros(self.dim)
            e[a] = h[a]
            pair = np.asarray(psi(np.stack([x + e, x - e]))).reshape(-1)
            lap += (pair.sum() - 2.0 * px) / h[a] ** 2
        return jump + 0.5 * self.local_diffusion * lap


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 2.0:
        raise AlphaOutOfRange(f"alpha must lie in (0, 2), got {alpha}")


def _square_integral_cos(power: float) -> float:
    return integrate.quad(lambda t: np.cos(t) ** power, 0.0, np.pi / 4, epsabs=0, epsrel=1e-13)[0]


def central_cell_moment(alpha: float, c_alpha: float, h: float, dim: int) -> float:
    """m = ∫ z_1^2 F(dz) over the central cell [-h/2, h/2]^d."""
    _check_alpha(alpha)
    a = h / 2.0
    if dim == 1:
        return 2.0 * c_alpha * a ** (2.0 - alpha) / (2.0 - alpha)
    if dim == 2:
        # polar coordinates; the square's radial extent is a / cos(t) on [0, pi/4]
        ang = _square_integral_cos(alpha - 2.0)
        return c_alpha * 4.0 * a ** (2.0 - alpha) / (2.0 - alpha) * ang
    raise ValueError("jump quadrature is implemented for d = 1, 2")


def square_tail_mass(alpha: float, c_alpha: float, a: float, dim: int) -> float:
    """F-mass outside the square [-a, a]^d."""
    _check_alpha(alpha)
    if dim == 1:
        return 2.0 * c_alpha * a ** (-alpha) / alpha
    if dim == 2:
        return 8.0 * c_alpha * a ** (-alpha) / alpha * _square_integral_cos(alpha)
    raise ValueError("jump quadrature is implemented for d = 1, 2")


def _weights_1d(alpha, c_alpha, h, kmax):
    k = np.arange(1, kmax + 1, dtype=float)
    lo, hi = (k - 0.5) * h, (k + 0.5) * h
    second = c_alpha * (hi ** (2.0 - alpha) - lo ** (2.0 - alpha)) / (2.0 - alpha)
    w = second / (k * h) ** 2
    offsets = np.concatenate([-k[::-1], k]).astype(np.int64)[:, None]
    return offsets, np.concatenate([w[::-1], w])


def _weights_2d(alpha, c_alpha, h, kmax):
    r = np.arange(-kmax, kmax + 1)
    K1, K2 = np.meshgrid(r, r, indexing="ij")
    offsets = np.stack([K1.ravel(), K2.ravel()], axis=1)
    offsets = offsets[np.any(offsets != 0, axis=1)]
    u = 0.5 * h * _GL_NODES
    wq = 0.25 * h * h * np.outer(_GL_WEIGHTS, _GL_WEIGHTS)
    U1, U2 = np.meshgrid(u, u, indexing="ij")
    w = np.empty(offsets.shape[0])
    for i, (k1, k2) in enumerate(offsets):
        z2 = (k1 * h + U1) ** 2 + (k2 * h + U2) ** 2
        w[i] = c_alpha * np.sum(wq * z2 ** (-alpha / 2.0)) / ((k1 * k1 + k2 * k2) * h * h)
    return offsets.astype(np.int64), w


def fractional_quadrature(alpha: float, c_alpha: float, grid, truncation_radius: float) -> JumpStencil:
    """Jump stencil for F(dz) = c_alpha |z|^(-d-alpha) dz on ``grid``'s lattice.

    The stencil covers every cell within ``truncation_radius`` (rounded up to
    whole cells); requires an isotropic lattice spacing.
    """
    _check_alpha(alpha)
    if not c_alpha > 0:
        raise ValueError("c_alpha must be positive")
    h_vec = np.asarray(grid.spacing, dtype=float)
    if not np.allclose(h_vec, h_vec[0], rtol=1e-12):
        raise ValueError("jump quadrature needs equal spacing on every axis")
    if truncation_radius < grid.domain.diameter * (1 - 1e-12):
        raise ValueError("truncation radius must be at least the domain diameter")
    h = float(h_vec[0])
    kmax = max(1, ceil(truncation_radius / h - 0.5))
    d = grid.dim
    if d == 1:
        offsets, w = _weights_1d(alpha, c_alpha, h, kmax)
    elif d == 2:
        offsets, w = _weights_2d(alpha, c_alpha, h, kmax)
    else:
        raise ValueError("jump quadrature is implemented for d = 1, 2")
    offsets.setflags(write=False)
    w.setflags(write=False)
    return JumpStencil(
        offsets=offsets,
        weights=w,
        local_diffusion=central_cell_moment(alpha, c_alpha, h, d),
        tail_mass=square_tail_mass(alpha, c_alpha, (kmax + 0.5) * h, d),
        spacing=h_vec.copy(),
        alpha=float(alpha),
        c_alpha=float(c_alpha),
    )
