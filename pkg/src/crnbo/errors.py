"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ConditioningError(RuntimeError):
    """Raised when a kernel matrix cannot be factored even at the maximum
    permitted diagonal jitter, or a posterior variance is too negative to
    be attributable to round-off."""


class FittingError(RuntimeError):
    """Raised when hyperparameter estimation cannot produce a finite result."""


class DegenerateCandidateError(RuntimeError):
    """Signals that a candidate input pair carries (numerically) zero
    posterior variance, i.e. it is already determined by the data."""
