"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError (and subclasses) -> 2,
ConvergenceError -> 3, OSError -> 4.
"""


class MoralloopError(Exception):
    """Base class for all package errors."""


class ValidationError(MoralloopError):
    """Invalid input: bad config values, malformed scenarios, bad CSV rows."""


class SchemaError(ValidationError):
    """CSV header does not match the canonical schema."""


class ParseError(ValidationError):
    """Principle DSL source failed to parse."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}, column {column})" if column is not None else f" (line {line})"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ConvergenceError(MoralloopError):
    """Optimization diverged or failed to converge where a result is required."""
