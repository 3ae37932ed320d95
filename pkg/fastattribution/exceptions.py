"""
Exception hierarchy for fastattribution.

All library errors derive from AttributionError so callers (and the CLI)
can separate usage problems from oracle and numerical failures.
"""

from collections.abc import Iterable


class AttributionError(Exception):
    """Base class for every error raised by fastattribution."""


class BoundsError(AttributionError, ValueError):
    """A count, index, size or mask width is outside its valid range."""


class ConfigError(AttributionError, ValueError):
    """Invalid configuration: unknown method/template, bad settings, wrong oracle kind."""


class DatasetError(AttributionError, ValueError):
    """
    A case file could not be parsed or validated.

    Attributes:
        line: 1-based line number of the offending record, if known.
        field: Name of the missing or invalid field, if known.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None) -> None:
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class OracleError(AttributionError):
    """Base class for utility-oracle failures."""


class OracleTransportError(OracleError):
    """
    The scoring endpoint could not be reached or answered with a transient failure.

    Retryable. Raised to callers only after the retry budget is spent.

    Attributes:
        status_code: HTTP status of the last attempt, if a response arrived.
        attempts: Number of attempts made.
    """

    def __init__(self, message: str, status_code: int | None = None, attempts: int = 1) -> None:
        self.status_code = status_code
        self.attempts = attempts
        super().__init__(message)


class OracleCapabilityError(OracleError):
    """The endpoint cannot provide what is required (e.g. per-token log-probabilities)."""


class InputTooLongError(OracleError):
    """Prompt plus continuation exceed the model's context window."""


class SingularSystemError(AttributionError):
    """
    A regression system is rank deficient.

    Attributes:
        columns: Indices of the columns found to be linearly dependent.
    """

    def __init__(self, columns: Iterable[int], message: str | None = None) -> None:
        self.columns = tuple(sorted(int(c) for c in columns))
        super().__init__(message or f"singular system; dependent columns {list(self.columns)}")


class UndefinedCorrelationError(AttributionError, ValueError):
    """A correlation is undefined because an input is constant (all ranks tied)."""


class BudgetExhaustedError(AttributionError):
    """An estimator asked for a new coalition after its oracle budget was spent."""
