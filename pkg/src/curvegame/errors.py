"""Semantic exception hierarchy shared across the package."""


class CurvegameError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CurvegameError, ValueError):
    """A numeric parameter violates an operation's precondition."""


class DegenerateRegionError(CurvegameError):
    """A cap intersection has (numerically) zero surface measure."""


class SamplingFailureError(CurvegameError):
    """Rejection sampling exceeded its attempt bound; region nearly degenerate."""


class OutOfBoundsError(CurvegameError):
    """A query point lies outside a field's bounding box."""


class NonConvergenceError(CurvegameError):
    """Value iteration hit max_iter with the increment still above tolerance.

    Carries the last iterate so callers can inspect or persist partial output.
    """

    def __init__(self, message, field=None, increment=None, iterations=None):
        super().__init__(message)
        self.field = field
        self.increment = increment
        self.iterations = iterations


class RunawayEpisodeError(CurvegameError):
    """An episode hit the hard round cap; diagnostic for mis-specified strategies."""


class CriticalPointError(CurvegameError):
    """Gradient too small to define the operator's direction at this point."""
