"""Exception hierarchy shared by all qsdlab modules."""

from __future__ import annotations


class QsdlabError(Exception):
    """Base class; `module` names the subsystem that raised."""

    module = "qsdlab"


# model ---------------------------------------------------------------------


class ModelError(QsdlabError):
    module = "model"


class EmptyInterior(ModelError):
    pass


class NonMonotoneScheme(ModelError):
    pass


class AlphaOutOfRange(ModelError, ValueError):
    pass


# spectral ------------------------------------------------------------------


class SpectralError(QsdlabError):
    module = "spectral"


class NonConvergence(SpectralError):
    pass


class SlowConvergence(SpectralError):
    """Power iteration ran out of iterations; `partial` holds the last iterate."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoLinearRegime(SpectralError):
    pass


# simulate ------------------------------------------------------------------


class SimulationError(QsdlabError):
    module = "simulate"


class TooFewSurvivors(SimulationError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class AllPathsKilled(SimulationError):
    pass


# ldp -----------------------------------------------------------------------


class LdpError(QsdlabError):
    module = "ldp"


class DerivativeMismatch(LdpError):
    pass


class BoxActive(LdpError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NotAbsolutelyContinuous(LdpError):
    pass


# cli -----------------------------------------------------------------------


class ConfigError(QsdlabError, ValueError):
    module = "cli"


class MismatchedExperiments(QsdlabError):
    module = "cli"
