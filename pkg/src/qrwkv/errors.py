"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform (matmul inner dims, broadcast, vector lengths)."""


class ContractError(ValueError):
    """An API precondition was violated (non-scalar loss, missing gradient, ...)."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class NumericError(ArithmeticError):
    """Non-finite or out-of-range values where finite ones are required."""
