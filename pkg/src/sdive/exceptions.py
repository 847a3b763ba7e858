"""Exception hierarchy for sdive."""


class SdiveError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SdiveError, ValueError):
    pass


class DomainError(SdiveError, ValueError):
    pass


class QuadratureError(SdiveError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance.

    ``worst`` holds ``(a, b, estimate, error)`` for the subinterval with the
    largest remaining error estimate.
    """

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class DegenerateSampleError(SdiveError, ValueError):
    pass


class DegenerateFitError(SdiveError, ArithmeticError):
    pass


class AssumptionViolationError(SdiveError, ArithmeticError):
    """A matrix that must be positive definite (e.g. J*) is not."""


class DatasetIntegrityError(SdiveError):
    pass


class ConfigError(SdiveError, ValueError):
    pass


class TuningAbortError(SdiveError):
    pass


class InvalidParameterError(InvalidInputError):
    """Parameter vector outside the model's parameter space."""


class DegenerateGridError(SdiveError, ValueError):
    """A regression grid does not determine the fitted coefficients."""
