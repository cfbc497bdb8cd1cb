"""Quasi-stationary and quasi-ergodic computations for killed Markov processes."""

__version__ = "0.1.0"
