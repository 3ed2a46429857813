"""Exception types shared across the package."""


class NumericalError(ArithmeticError):
    """Raised when a computation breaks down numerically.

    Examples are non-finite inputs, a failed eigensolver, a degenerate
    projected scatter, or a solver iterate with a non-finite cost.
    """


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent."""
