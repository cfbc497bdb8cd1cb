"""The three process classes: overdamped, kinetic and stable-driven."""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as gamma_fn, pi
from typing import Union

from qsdlab.errors import AlphaOutOfRange
from qsdlab.model.fields import ScalarField, VectorField


def stable_constant(dim: int, alpha: float) -> float:
    """Lévy density constant of the rotationally invariant stable law with
    characteristic exponent |xi|^alpha (the fractional Laplacian normalisation)."""
    if not 0.0 < alpha < 2.0:
        raise AlphaOutOfRange(f"alpha must lie in (0, 2), got {alpha}")
    return (
        alpha * 2.0 ** (alpha - 1.0) * gamma_fn((dim + alpha) / 2.0)
        / (pi ** (dim / 2.0) * gamma_fn(1.0 - alpha / 2.0))
    )


@dataclass(frozen=True)
class OverdampedLangevin:
    """dX = c(X) dt + dB with c = -grad U, or a general drift.

    ``scheme='symmetric'`` assembles the generator in detailed-balance form
    with respect to exp(-2U); it requires a potential.
    """

    potential: ScalarField | None = None
    drift: VectorField | None = None
    scheme: str = "central"

    def __post_init__(self):
        if (self.potential is None) == (self.drift is None):
            raise ValueError("give exactly one of potential or drift")
        if self.scheme not in ("central", "symmetric"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "symmetric" and self.potential is None:
            raise ValueError("the symmetric scheme needs a potential")

    kind = "overdamped"

    @property
    def dim(self) -> int:
        return self.potential.dim if self.potential is not None else self.drift.dim

    @property
    def drift_field(self) -> VectorField:
        if self.drift is not None:
            return self.drift
        return VectorField.minus_gradient(self.potential)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "scheme": self.scheme}
        if self.potential is not None:
            d["U"] = self.potential.expr
        else:
            d["drift"] = list(self.drift.exprs)
        return d


@dataclass(frozen=True)
class KineticLangevin:
    """dX = V dt, dV = -grad U(X) dt - gamma V dt + dB."""

    potential: ScalarField
    gamma: float = 1.0

    kind = "kinetic"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("friction gamma must be positive")

    @property
    def dim(self) -> int:
        return self.potential.dim

    def to_dict(self) -> dict:
        return {"kind": self.kind, "U": self.potential.expr, "gamma": self.gamma}


@dataclass(frozen=True)
class StableSDE:
    """dX = -grad U(X) dt + dL^alpha with Lévy measure c_alpha |z|^(-d-alpha) dz.

    ``c_alpha=None`` selects :func:`stable_constant`, i.e. the driving noise
    has characteristic function exp(-t |xi|^alpha).
    """

    potential: ScalarField
    alpha: float
    c_alpha: float | None = None

    kind = "stable"

    def __post_init__(self):
        if not 0.0 < float(self.alpha) < 2.0:
            raise AlphaOutOfRange(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.c_alpha is None:
            object.__setattr__(self, "c_alpha", stable_constant(self.dim, self.alpha))
        elif not self.c_alpha > 0:
            raise ValueError("c_alpha must be positive")

    @property
    def dim(self) -> int:
        return self.potential.dim

    @property
    def noise_scale(self) -> float:
        """sigma such that the noise is sigma times the standard stable process."""
        return (self.c_alpha / stable_constant(self.dim, self.alpha)) ** (1.0 / self.alpha)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "U": self.potential.expr, "alpha": self.alpha, "c_alpha": self.c_alpha}


ProcessSpec = Union[OverdampedLangevin, KineticLangevin, StableSDE]
