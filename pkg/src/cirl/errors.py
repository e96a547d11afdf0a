"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class CirlError(Exception):
    """Base class for every error raised deliberately by this package."""


class InvalidParameterError(CirlError, ValueError):
    pass


class InvalidInputError(CirlError, ValueError):
    pass


class ShapeError(CirlError, ValueError):
    pass


class DomainError(CirlError, ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


class OutOfContextError(CirlError, ValueError):
    """Raised when a day index has no complete history window behind it."""


class ParseError(CirlError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(CirlError, ValueError):
    pass


class NonFiniteLossError(CirlError, FloatingPointError):
    def __init__(self, epoch: int, value: float, replica: int | None = None):
        self.epoch = epoch
        self.value = value
        self.replica = replica
        where = f" (replica {replica})" if replica is not None else ""
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}{where}")
