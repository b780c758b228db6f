"""Exception types raised across the package."""


class TensorError(Exception):
    """Base class for all package errors."""


class ShapeError(TensorError, ValueError):
    """Operand dimensions do not conform."""


class OrderError(ShapeError):
    """Tensor order is too small for the requested operation."""


class DomainError(TensorError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class SymmetryError(TensorError, ValueError):
    """Tensor is not symmetric under the t-transpose."""


class IndefiniteError(TensorError, ArithmeticError):
    """A spectrum slice failed a positive-definiteness pivot test."""


class ConfigError(TensorError, ValueError):
    """Invalid user-supplied configuration value."""
