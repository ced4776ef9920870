"""Exception taxonomy shared across the package."""


class SpaflError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SpaflError):
    """Invalid shapes, hyperparameters or experiment settings."""


class DataError(SpaflError):
    """Malformed dataset files or out-of-range labels."""


class NumericError(SpaflError):
    """Non-finite values encountered where finite ones are required."""


class ProtocolError(SpaflError):
    """Client/server exchange violated the declared wire discipline."""


class UsageError(SpaflError):
    """Bad command-line or config-file input."""
