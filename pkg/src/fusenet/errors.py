"""Exception hierarchy shared by every fusenet module."""


class FusenetError(Exception):
    """Base class for all errors raised by fusenet."""


class ShapeError(FusenetError, ValueError):
    """Tensor dimensions are invalid or do not line up."""


class NumericError(FusenetError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class UsageError(FusenetError):
    """An API was called outside its contract."""


class IngestionError(FusenetError):
    """A corpus file is missing or malformed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f" [{path}" + (f", line {line}" if line is not None else "") + "]"
        super().__init__(message + where)
        self.path = path
        self.line = line


class PreprocessingError(FusenetError):
    """Preprocessing cannot proceed, e.g. a channel has zero variance."""


class CheckpointError(FusenetError):
    """A checkpoint or dataset cache could not be read back."""
