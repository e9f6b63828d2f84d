"""Exception types raised across the package."""


class AequityError(Exception):
    """Base class for all package errors."""


class ConfigError(AequityError, ValueError):
    """Invalid configuration values, missing keys or malformed config files."""


class DataError(AequityError, ValueError):
    """Problems with tabular input: shapes, missing cells, non-numeric values."""


class NumericError(AequityError, ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer
