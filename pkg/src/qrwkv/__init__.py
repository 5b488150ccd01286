"""RWKV-style forecaster with an optional quantum channel-mixing branch."""

from .errors import ConfigError, ContractError, DimensionError, NumericError

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "NumericError",
]

__version__ = "0.1.0"
