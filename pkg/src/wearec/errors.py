"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class WearecError(Exception):
    """Base class for all package errors."""


class InvalidInputError(WearecError, ValueError):
    """An operation received arguments that violate its contract."""


class ConfigError(WearecError):
    """Invalid configuration or command usage."""


class DataError(WearecError):
    """Malformed dataset, split, or checkpoint content."""


class NumericalError(WearecError):
    """Non-finite values or a failed numerical check."""
