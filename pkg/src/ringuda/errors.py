"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (see ``ringuda.cli``):
config/usage problems exit 2, data problems 3, numeric problems 4,
and I/O problems (plain ``OSError``) 5.
"""


class Error(Exception):
    """Base class for every error raised by this package."""


class ConfigError(Error):
    """Invalid configuration value, combination, or unknown config key."""


class ScheduleError(ConfigError):
    """Learning-rate schedule queried outside its configured range."""


class ShapeError(Error):
    """Tensor or vector dimensions do not line up."""


class GraphError(Error):
    """Graph construction or use outside its preconditions."""


class DataError(Error):
    """Malformed or inconsistent dataset content."""


class FormatError(DataError):
    """A binary or CSV container violates its documented layout."""


class EvalError(DataError):
    """Evaluation requested on unusable data."""


class InferenceError(DataError):
    """Single-query inference cannot proceed (e.g. empty prototype bank)."""


class NumericError(Error):
    """Non-finite values or numerically undefined operations."""


class LossError(NumericError):
    """A loss term is undefined for the given batch (e.g. too few rows)."""
