"""Exception hierarchy shared across the package."""


class RareISError(Exception):
    """Base class for every error raised by rare_is."""


class DomainError(RareISError, ValueError):
    """An argument lies outside the domain of the operation."""


class ParameterError(RareISError, ValueError):
    """Invalid model, twist or estimator parameter."""


class NumericalError(RareISError, ArithmeticError):
    """A numerical kernel failed to reach its tolerance.

    ``estimates`` holds the last two values produced before giving up.
    """

    def __init__(self, message, estimates=None, where=None):
        super().__init__(message)
        self.estimates = estimates
        self.where = where


class ConfigError(RareISError, ValueError):
    """Experiment configuration failed validation; ``key`` is the dotted path."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.detail = message


class TableError(RareISError):
    """A table archive is corrupted, of the wrong version, or mismatched."""


class EstimatorError(RareISError):
    """The forward sampler produced unusable samples."""


class UnestimableError(EstimatorError):
    """A pilot run never observed the event, so no sample size can be derived."""
