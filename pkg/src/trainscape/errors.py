"""Error taxonomy shared by every module.

The split matters for the command line tool, which maps error classes to
exit codes: configuration problems exit 2, data and input problems exit 3,
and operating on an unfinished sweep exits 4.
"""


class TrainscapeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TrainscapeError, ValueError):
    """A configuration value is missing, malformed, or out of range."""


class InputError(TrainscapeError, ValueError):
    """A runtime argument violates an operation's contract."""


class ShapeError(InputError):
    """Array shapes are incompatible with the requested operation."""


class DataError(TrainscapeError, ValueError):
    """A data source could not be read, written, or understood."""


class FormatError(DataError):
    """A file exists but its contents do not match the expected layout."""


class IncompleteSweepError(TrainscapeError, ValueError):
    """An analysis step was asked to run on a sweep with unfinished cells."""
