"""Exception hierarchy shared by every module of the package."""


class AvgSGDError(Exception):
    """Base class for all errors raised by avgsgd."""


class DimensionError(AvgSGDError, ValueError):
    """Array shapes do not agree with the model or with each other."""


class NonFiniteError(AvgSGDError, ValueError):
    """An input contained NaN or infinite entries."""


class InvalidObservationError(AvgSGDError, ValueError):
    """An observation violates its invariants (label domain, feature norm)."""


class DegenerateSegmentError(AvgSGDError):
    """Every probe on a segment fell below the curvature guard."""


class MinimumNotAttainedError(AvgSGDError):
    """The empirical risk has no minimizer (e.g. separable logistic data)."""


class ConvergenceError(AvgSGDError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StreamExhaustedError(AvgSGDError):
    """A finite data stream ran out before the requested horizon."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ValidityRangeError(AvgSGDError, ValueError):
    """A bound was requested outside the range where it is proven."""


class RateFitError(AvgSGDError, ValueError):
    """A log-log rate fit received data it cannot take logarithms of."""


class ConfigError(AvgSGDError, ValueError):
    """A configuration failed validation; ``field`` names the culprit."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
