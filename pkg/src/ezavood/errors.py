"""Exception hierarchy shared across the package."""


class EzAvoodError(Exception):
    """Base class for all package errors."""


class ValidationError(EzAvoodError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shapes do not line up."""


class NumericalError(EzAvoodError, ArithmeticError):
    """A computation produced non-finite values."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""


class HygieneError(EzAvoodError):
    """An unseen-class sample reached a training path."""


class ConfigError(EzAvoodError):
    """A pipeline configuration is invalid or references a missing plug-in."""


class FormatError(EzAvoodError):
    """A file on disk does not match its declared binary/CSV layout."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
