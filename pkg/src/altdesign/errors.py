"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError`; configuration
problems from :class:`ConfigError`. The CLI maps the two families onto
exit codes 3 and 2 respectively.
"""


class AltDesignError(Exception):
    """Base class for every error raised by the package."""


class NumericalError(AltDesignError):
    pass


class ConfigError(AltDesignError, ValueError):
    """Invalid user configuration. ``path`` names the offending field."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path)
        super().__init__(f"{where}: {message}" if where else message)


class DomainError(NumericalError, ValueError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    def __init__(self, message, theta=None):
        self.theta = theta
        super().__init__(message)


class DimensionMismatch(NumericalError, ValueError):
    pass


class DegreesOfFreedomError(NumericalError):
    pass


class SingularInformation(NumericalError):
    pass


class UnsupportedLossForModel(NumericalError):
    pass


class IncompatibleLoss(NumericalError):
    pass


class AllWeightsDegenerate(NumericalError):
    def __init__(self, message, ess=float("nan")):
        self.ess = ess
        super().__init__(message)


class InfeasibleStart(NumericalError):
    pass
