"""Exception hierarchy shared across the package.

Each error class maps to a distinct process exit code so batch scripts can
dispatch on failure kind without parsing messages.
"""


class PoseRegError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PoseRegError):
    """Invalid configuration: bad parameter values, malformed config files,
    infeasible generator settings."""

    exit_code = 2


class DataError(PoseRegError):
    """Invalid data: unreadable images, shape mismatches, empty or
    inconsistent dictionaries, broken manifests."""

    exit_code = 3


class NumericalError(PoseRegError):
    """Numerical failure: non-finite iterates, factorization breakdown."""

    exit_code = 4
