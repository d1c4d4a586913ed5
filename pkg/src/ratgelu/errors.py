"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the region where a construction is valid."""


class PoleError(DomainError):
    """A plain rational function was evaluated at (or scanned across) a denominator zero."""

    def __init__(self, x, message=None):
        self.x = x
        super().__init__(message or f"denominator vanishes at x={x}")


class EvaluationError(ArithmeticError):
    """A function returned a non-finite value on an evaluation grid."""

    def __init__(self, x, value):
        self.x = x
        self.value = value
        super().__init__(f"non-finite value {value!r} at grid point x={x}")


class InsufficientDataError(ValueError):
    """Too few admissible points to fit a convergence slope."""


class NumericalError(ArithmeticError):
    """An internal solver failed to converge or produced a degenerate system."""


class RangeInvariantError(ArithmeticError):
    """A Clenshaw state left the range the product gadget was built for."""

    def __init__(self, k, value, bound):
        self.k = k
        self.value = value
        self.bound = bound
        super().__init__(f"|b_{k}| = {value} exceeds range bound B = {bound}")


class VacuousBoundError(ValueError):
    """The requested tolerance makes the lower bound trivially true."""


class DegenerateAffineError(ValueError):
    """Affine reparameterization with zero scale."""


class ResourceError(RuntimeError):
    """A requested sweep is larger than the desk-scale limits allow."""


class BoundViolation(AssertionError):
    """A measured quantity exceeded the bound it is supposed to respect."""
