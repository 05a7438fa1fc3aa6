"""Exception types shared across the package."""

from __future__ import annotations


class FansError(Exception):
    """Base class for all package errors."""


class ContractViolation(FansError, ValueError):
    """A precondition on an operation's inputs was not met."""


class NumericalError(FansError, ArithmeticError):
    """NaN/Inf appeared in a value or gradient.

    ``snapshot`` carries whatever diagnostic state the raiser collected.
    """

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class UnderpoweredError(FansError):
    """Too few samples for a conditional-independence test."""

    def __init__(self, have: int, need: int):
        super().__init__(f"under-powered CI test: have n={have}, need n>={need}")
        self.have = have
        self.need = need


class EpisodeOverrunError(FansError):
    """step() was called after the episode horizon was reached."""


class ConfigError(FansError):
    """Malformed or invalid experiment configuration."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column
