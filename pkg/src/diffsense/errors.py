"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class DiffsenseError(Exception):
    """Base class for library errors."""


class DomainError(DiffsenseError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(DiffsenseError, ArithmeticError):
    """A computation produced non-finite values or lost all precision."""

    def __init__(self, message: str, **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class DivergenceError(NumericalError):
    """A reverse trajectory left the admissible norm ball."""


class FormatError(DiffsenseError, ValueError):
    """A serialized file has the wrong magic, version or layout."""


class DatasetIOError(DiffsenseError, OSError):
    """A dataset file ended early or could not be read."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")
