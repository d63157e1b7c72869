"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its precondition."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class CapacityError(ValueError):
    """Problem size exceeds what an exact method can handle."""


class ConfigError(ValueError):
    """Invalid or unknown configuration."""
