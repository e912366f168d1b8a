"""Exception types raised across the package."""


class TrlseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TrlseError, ValueError):
    """Point or lengthscale dimensions disagree."""

    def __init__(self, expected, got, what="point"):
        super().__init__(f"{what} has dimension {got}, expected {expected}")
        self.expected = expected
        self.got = got


class FactorizationError(TrlseError):
    """A covariance matrix could not be factorized even after maximum jitter."""

    def __init__(self, message, condition_estimate=float("nan"), jitter=None):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate
        self.jitter = jitter


class PreconditionError(TrlseError, ValueError):
    """An argument violates a documented precondition."""


class InfeasibleSearchError(TrlseError):
    """No feasible candidate was found outside the excluded boxes."""
