"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError (and subclasses) exit
with 2, NumericError with 3.
"""


class QuasikinError(Exception):
    """Base class for all package errors."""


class ValidationError(QuasikinError):
    """Bad user input: dimensions, ranges, malformed files."""


class NetworkParseError(ValidationError):
    """Syntax error in a reaction-network text file."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class NumericError(QuasikinError):
    """Numerical failure (singular matrix, non-finite value, ...).

    ``interval`` carries the 1-based time-interval index when the failure
    happened inside a per-interval loop.
    """

    def __init__(self, message: str, interval: int | None = None):
        self.interval = interval
        if interval is not None:
            message = f"interval {interval}: {message}"
        super().__init__(message)


class SingularModelError(NumericError):
    """Model covariance has no usable rank (e.g. all rates zero, no ridge)."""
