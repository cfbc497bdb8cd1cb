"""Process, domain and grid descriptions and discrete generators."""

from qsdlab.model.domain import DomainSpec, GridSpec
from qsdlab.model.fields import (
    PotentialField,
    ScalarField,
    StableLyapunov,
    VectorField,
    WeightFunction,
)
from qsdlab.model.fractional import JumpStencil, fractional_quadrature
from qsdlab.model.generator import (
    GridOperator,
    build_generator,
    kinetic_domain,
    velocity_cutoff,
)
from qsdlab.model.lyapunov import LyapunovReport, growth_constant, lyapunov_check
from qsdlab.model.process import (
    KineticLangevin,
    OverdampedLangevin,
    ProcessSpec,
    StableSDE,
    stable_constant,
)

__all__ = [
    "DomainSpec",
    "GridSpec",
    "GridOperator",
    "JumpStencil",
    "KineticLangevin",
    "LyapunovReport",
    "OverdampedLangevin",
    "PotentialField",
    "ProcessSpec",
    "ScalarField",
    "StableLyapunov",
    "StableSDE",
    "VectorField",
    "WeightFunction",
    "build_generator",
    "fractional_quadrature",
    "growth_constant",
    "kinetic_domain",
    "lyapunov_check",
    "stable_constant",
    "velocity_cutoff",
]
