"""Cramér functional, quasi-ergodic distribution, rate function and the reversible oracle."""

from qsdlab.ldp.cramer import (
    CramerFunctional,
    QuasiErgodicDistribution,
    central_difference,
    cramer,
    gateaux,
    qed,
)
from qsdlab.ldp.rate import RateFunctionResult, rate_function
from qsdlab.ldp.reversible import DirichletFormContext, dirichlet_eigenvalue, reversible_rate

__all__ = [
    "CramerFunctional",
    "DirichletFormContext",
    "QuasiErgodicDistribution",
    "RateFunctionResult",
    "central_difference",
    "cramer",
    "dirichlet_eigenvalue",
    "gateaux",
    "qed",
    "rate_function",
    "reversible_rate",
]
