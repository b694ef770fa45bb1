"""Exception and warning types raised across the package."""


class AdaptiveDesignError(Exception):
    """Base class for all package errors."""


class ShapeError(AdaptiveDesignError, ValueError):
    pass


class Assumption1Violation(AdaptiveDesignError):
    """A polynomial required to be stable has a root on or outside the unit circle."""


class DomainViolation(AdaptiveDesignError):
    """Parameters fall outside the set where the predictor is stable."""


class NumericalError(AdaptiveDesignError, ArithmeticError):
    pass


class DegenerateOrder(AdaptiveDesignError):
    pass


class BudgetExceeded(AdaptiveDesignError):
    pass


class NotPSDSpectrum(AdaptiveDesignError):
    pass


class OrderError(AdaptiveDesignError):
    pass


class SingularInformation(AdaptiveDesignError, ArithmeticError):
    pass


class StructureError(AdaptiveDesignError):
    pass


class OdeExitedDomain(AdaptiveDesignError):
    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class BoundarySpectrum(UserWarning):
    """Spectral factor has zeros on the unit circle (within tolerance)."""


class OrderMismatchWarning(UserWarning):
    """Generator order differs from p_b - 1 in the L2-gain design problem."""
