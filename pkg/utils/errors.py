from utils.constants import EXIT_DATA, EXIT_MODEL, EXIT_USAGE


class TreeBoostError(Exception):
    """Base class for errors raised by this package."""
    kind = "error"
    exit_code = 1


class ConfigError(TreeBoostError, ValueError):
    """Invalid tuning parameters or command-line arguments."""
    kind = "usage"
    exit_code = EXIT_USAGE


class DataError(TreeBoostError, ValueError):
    """Input data that cannot be used (bad cells, NaN/Inf, constant columns, wrong shape)."""
    kind = "data"
    exit_code = EXIT_DATA


class ModelError(TreeBoostError):
    """Unreadable, inconsistent or unsupported model file."""
    kind = "model"
    exit_code = EXIT_MODEL
