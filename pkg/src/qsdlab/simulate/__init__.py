"""Killed-path simulation and conditioned Monte Carlo estimators."""

from qsdlab.simulate.ensemble import (
    Binning,
    EmpiricalMeasure,
    EnsembleStats,
    FeynmanKacEstimate,
    FlemingViotResult,
    InitialLaw,
    MassCollapse,
    PathSample,
    RngPolicy,
    feynman_kac_mc,
    fleming_viot,
    free_terminal_states,
    rejection_conditional_ensemble,
    sample_killed_path,
)
from qsdlab.simulate.rng import CounterRNG
from qsdlab.simulate.steps import stable_increment, step_kinetic, step_overdamped

__all__ = [
    "Binning",
    "CounterRNG",
    "EmpiricalMeasure",
    "EnsembleStats",
    "FeynmanKacEstimate",
    "FlemingViotResult",
    "InitialLaw",
    "MassCollapse",
    "PathSample",
    "RngPolicy",
    "feynman_kac_mc",
    "fleming_viot",
    "free_terminal_states",
    "rejection_conditional_ensemble",
    "sample_killed_path",
    "stable_increment",
    "step_kinetic",
    "step_overdamped",
]
