"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class CluesError(Exception):
    exit_code = 1


class ParseError(CluesError):
    """Malformed or unreadable input file."""

    exit_code = 2


class ValidationError(CluesError, ValueError):
    """Input parsed but violates a data-type invariant."""

    exit_code = 3


class DegenerateInputError(ValidationError):
    """Input is well formed but carries no usable signal (e.g. all-zero distances)."""


class ConvergenceError(CluesError):
    """Raised only when the caller opts into treating solver warnings as errors."""

    exit_code = 4
