"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so new errors should
subclass the closest existing class rather than Exception.
"""


class TasignError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TasignError):
    """Invalid configuration or unusable inputs (maps to a usage failure)."""


class ParseError(TasignError):
    """Malformed file content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrderingError(ParseError):
    """Timestamps decrease within a signature file."""


class DegenerateSignatureError(ParseError):
    """Signature too short to be usable."""


class ManifestReferenceError(ParseError):
    """A manifest or comparison file references an unknown path."""


class ConsistencyError(ParseError):
    """Cross-field contradiction, e.g. mixed enrolment users."""


class NumericError(TasignError):
    """Non-finite values where finite numbers are required."""


class PathMismatchError(NumericError):
    """A warping path does not fit the sequences it is applied to."""
