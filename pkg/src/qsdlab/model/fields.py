"""Scalar fields on R^d given as symbolic expressions.

A field is written in the coordinates ``x`` (1D), ``x, y`` (2D) or ``x, y, z``
(3D).  The same expression is compiled twice: once for vectorised numpy
evaluation on grids and once as a scalar ``math`` function that numba can
inline into the path kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import sympy as sp

COORD_NAMES = ("x", "y", "z")


def coord_symbols(dim: int) -> tuple[sp.Symbol, ...]:
    if not 1 <= dim <= 3:
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    return sp.symbols(COORD_NAMES[:dim], real=True)


@dataclass(frozen=True)
class ScalarField:
    """A smooth scalar function of the spatial coordinates."""

    expr: str
    dim: int = 1

    def __post_init__(self):
        # parse eagerly so malformed input fails at construction time
        _ = self.sym

    @cached_property
    def sym(self) -> sp.Expr:
        local = {n: s for n, s in zip(COORD_NAMES, coord_symbols(self.dim))}
        e = sp.sympify(self.expr, locals=local)
        free = {s.name for s in e.free_symbols}
        unknown = free - set(COORD_NAMES[: self.dim])
        if unknown:
            raise ValueError(f"field {self.expr!r} uses unknown symbols {sorted(unknown)}")
        return e

    @property
    def symbols(self):
        return coord_symbols(self.dim)

    def _numpy(self, e) -> Callable:
        f = sp.lambdify(self.symbols, e, modules="numpy")

        def call(points):
            pts = np.atleast_2d(np.asarray(points, dtype=float))
            if pts.shape[-1] != self.dim:
                pts = pts.reshape(-1, self.dim)
            out = f(*(pts[:, k] for k in range(self.dim)))
            return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()

        return call

    @cached_property
    def _value(self):
        return self._numpy(self.sym)

    @cached_property
    def _grad(self):
        return [self._numpy(sp.diff(self.sym, s)) for s in self.symbols]

    def __call__(self, points) -> np.ndarray:
        """Evaluate at an ``(m, dim)`` array of points (or ``(m,)`` in 1D)."""
        return self._value(points)

    def gradient(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, self.dim)
        return np.stack([g(pts) for g in self._grad], axis=1)

    def laplacian(self, points) -> np.ndarray:
        lap = sum(sp.diff(self.sym, s, 2) for s in self.symbols)
        return self._numpy(lap)(points)

    def scalar_function(self, e: sp.Expr | None = None) -> Callable:
        """Plain ``math``-module function of ``dim`` floats; numba can jit it."""
        return sp.lambdify(self.symbols, self.sym if e is None else e, modules="math")

    def gradient_functions(self) -> list[Callable]:
        return [self.scalar_function(sp.diff(self.sym, s)) for s in self.symbols]

    def to_dict(self) -> dict:
        return {"expr": self.expr, "dim": self.dim}


@dataclass(frozen=True)
class VectorField:
    """A drift given componentwise by expressions (non-gradient allowed)."""

    exprs: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "exprs", tuple(self.exprs))
        _ = self.components

    @property
    def dim(self) -> int:
        return len(self.exprs)

    @cached_property
    def components(self) -> tuple[ScalarField, ...]:
        return tuple(ScalarField(e, self.dim) for e in self.exprs)

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, self.dim)
        return np.stack([c(pts) for c in self.components], axis=1)

    def scalar_functions(self) -> list[Callable]:
        return [c.scalar_function() for c in self.components]

    @classmethod
    def minus_gradient(cls, U: ScalarField) -> "VectorField":
        return cls(tuple(str(-sp.diff(U.sym, s)) for s in U.symbols))


@dataclass(frozen=True)
class PotentialField:
    """Bounded Feynman-Kac twist V sampled on the interior nodes."""

    values: np.ndarray
    sup_norm: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("potential values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sup_norm", float(np.max(np.abs(v))) if v.size else 0.0)

    @classmethod
    def zero(cls, n: int) -> "PotentialField":
        return cls(np.zeros(n))

    @classmethod
    def constant(cls, n: int, c: float) -> "PotentialField":
        return cls(np.full(n, float(c)))

    @classmethod
    def from_field(cls, f: ScalarField, points: np.ndarray) -> "PotentialField":
        return cls(f(points))

    def __len__(self):
        return self.values.size

    def __add__(self, other):
        if isinstance(other, PotentialField):
            return PotentialField(self.values + other.values)
        return PotentialField(self.values + float(other))

    def __mul__(self, s):
        return PotentialField(self.values * float(s))

    __rmul__ = __mul__

    def max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class WeightFunction:
    """Lyapunov weight W >= 1 on the interior nodes."""

    values: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)) or np.any(w < 1.0):
            raise ValueError("weight function must be finite and >= 1")
        w.setflags(write=False)
        object.__setattr__(self, "values", w)
        p = dict(self.params)
        if {"beta", "theta", "alpha"} <= p.keys():
            if not 2.0 * p["beta"] * p["theta"] < min(p["alpha"], 1.0):
                raise ValueError("stable weight needs 2*beta*theta < min(alpha, 1)")
        object.__setattr__(self, "params", p)

    @classmethod
    def ones(cls, n: int) -> "WeightFunction":
        return cls(np.ones(n))

    def norm(self, f: np.ndarray) -> float:
        """Weighted sup-norm max_i |f_i| / W_i."""
        return float(np.max(np.abs(f) / self.values))


class StableLyapunov:
    """The radial function 2 + |x|^(beta*theta) outside the unit ball.

    Inside the ball it is continued by the even quartic a + b r^2 + c r^4
    matching value, slope and curvature at r = 1, which keeps it C^2 and >= 1.
    """

    def __init__(self, beta: float, theta: float, alpha: float, p: float = 2.0):
        self.beta, self.theta, self.alpha, self.p = float(beta), float(theta), float(alpha), float(p)
        k = self.beta * self.theta
        if not 2.0 * k < min(self.alpha, 1.0):
            raise ValueError("stable weight needs 2*beta*theta < min(alpha, 1)")
        if self.p <= 1.0:
            raise ValueError("p must exceed 1")
        self.k = k
        self.c = k * (k - 2.0) / 8.0
        self.b = (k - 4.0 * self.c) / 2.0
        self.a = 3.0 - self.b - self.c

    def radial(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        inner = self.a + self.b * r**2 + self.c * r**4
        with np.errstate(divide="ignore"):
            outer = 2.0 + np.where(r > 0, r, 1.0) ** self.k
        return np.where(r < 1.0, inner, outer)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        r = np.abs(pts) if pts.ndim == 1 else np.linalg.norm(pts, axis=1)
        return self.radial(r)

    def level_radius(self, R: float) -> float:
        """Radius at which the function reaches the level R (R > 2 + 1)."""
        if R <= 3.0:
            raise ValueError("level must exceed 3 to lie outside the unit ball")
        return float((R - 2.0) ** (1.0 / self.k))

    def weight(self, points) -> WeightFunction:
        params = {"beta": self.beta, "theta": self.theta, "alpha": self.alpha, "p": self.p}
        return WeightFunction(self(points) ** (1.0 / self.p), params)
