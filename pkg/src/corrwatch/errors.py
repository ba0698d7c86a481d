"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
class that applies.
"""


class CorrwatchError(Exception):
    """Base class for all package errors."""


class ConfigError(CorrwatchError):
    """Invalid parameter or run-configuration value."""


class DataError(CorrwatchError):
    """Malformed or degenerate input data."""


class StateError(CorrwatchError):
    """Operation called on an object in the wrong state."""
