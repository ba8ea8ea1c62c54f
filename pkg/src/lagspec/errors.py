"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class LagspecError(Exception):
    pass


class ConfigError(LagspecError, ValueError):
    """Invalid configuration or parameter combination."""


class DataError(LagspecError, ValueError):
    """Malformed or unusable input data."""


class InsufficientDataError(DataError):
    """Too few observations for the requested construction."""


class DimensionError(DataError):
    """Mismatched array shapes or dimensions."""


class NumericalError(LagspecError, RuntimeError):
    """Numerical computation failed (non-convergence, indefinite input)."""
