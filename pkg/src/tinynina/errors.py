"""Exception types shared across the package."""


class TinyNinaError(Exception):
    """Base class for all package errors."""


class ShapeError(TinyNinaError, ValueError):
    """A tensor had the wrong shape. ``dim`` names the offending dimension."""

    def __init__(self, message, dim=None, expected=None, actual=None):
        super().__init__(message)
        self.dim = dim
        self.expected = expected
        self.actual = actual


class FormatError(TinyNinaError, ValueError):
    """A binary or text file is malformed. ``offset`` is the byte position, when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(TinyNinaError, ArithmeticError):
    """A NaN or Inf appeared where a finite value is required."""


class ConfigError(TinyNinaError, ValueError):
    """Invalid configuration key or value."""


class DataError(TinyNinaError, ValueError):
    """A dataset or manifest cannot be used as requested."""
