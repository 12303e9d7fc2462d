"""Exception types raised across the package."""


class GmcError(Exception):
    """Base class for all package errors."""


class DomainError(GmcError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class SingularityError(DomainError):
    """Evaluation requested at a point where a kernel is singular."""


class RegimeError(DomainError):
    """Intermittency parameter outside the supported regime."""


class UnsupportedError(GmcError, NotImplementedError):
    """Requested combination of parameters is not implemented."""


class EmptySetError(GmcError, ValueError):
    """A set specification selects no grid cell."""


class ContractError(GmcError, ValueError):
    """Input object does not satisfy an operation's preconditions."""


class QuadratureError(GmcError, RuntimeError):
    """Numerical integration failed to reach the requested tolerance.

    Attributes
    ----------
    residual : float
        Error estimate achieved before giving up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual


class FactorizationError(GmcError, RuntimeError):
    """Covariance factorisation failed even after PSD repair."""


class TruncationError(GmcError, RuntimeError):
    """A simulation horizon was exceeded.

    Attributes
    ----------
    probability : float
        Estimate of the probability of exceeding the horizon.
    """

    def __init__(self, message, probability=float("nan")):
        super().__init__(f"{message} (exceedance probability ~ {probability:.3e})")
        self.probability = probability


class ConfigError(GmcError, ValueError):
    """Experiment configuration failed validation."""


class ResourceError(GmcError, MemoryError):
    """Requested computation does not fit the resource limits."""
