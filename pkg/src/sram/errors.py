"""Exception types shared across the package."""


class SramError(Exception):
    """Base class for all package errors."""


class ShapeError(SramError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class DataError(SramError, ValueError):
    """A dataset or model file is malformed or violates an invariant."""


class NumericError(SramError, ArithmeticError):
    """A non-finite value appeared where finite math was required."""


class UsageError(SramError, ValueError):
    """Bad command-line arguments."""
