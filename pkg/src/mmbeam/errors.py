"""Exception hierarchy shared across the package."""


class MMBeamError(Exception):
    """Base class for all package errors."""


class DimensionError(MMBeamError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(MMBeamError, ValueError):
    """An input violates a documented precondition or invariant."""


class ContractError(MMBeamError, RuntimeError):
    """An API was used outside its calling contract."""


class NumericError(MMBeamError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""
