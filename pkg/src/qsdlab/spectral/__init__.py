"""Semigroup action, principal eigentriples and spectral-gap estimates."""

from qsdlab.spectral.eigen import (
    EigenTriple,
    principal_eigentriple,
    rayleigh_residuals,
    semigroup_apply,
)
from qsdlab.spectral.gap import (
    GapEstimate,
    WeightedNorm,
    decay_residuals,
    gap_estimate,
    survival_curve,
    survival_decay,
)
from qsdlab.spectral.krylov import expv

__all__ = [
    "EigenTriple",
    "GapEstimate",
    "WeightedNorm",
    "decay_residuals",
    "expv",
    "gap_estimate",
    "principal_eigentriple",
    "rayleigh_residuals",
    "semigroup_apply",
    "survival_curve",
    "survival_decay",
]
