"""Exception hierarchy shared by all echo_audit modules."""

from __future__ import annotations


class EchoAuditError(Exception):
    """Base class for every error raised by this package."""


class LogParseError(EchoAuditError):
    """A row in an input stream could not be parsed.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(LogParseError):
    """The field set of a row or header does not match the log kind."""


class DimensionError(LogParseError):
    """An embedding row does not match the established dimensionality."""


class IntegrityError(EchoAuditError):
    """Input data violates a uniqueness or consistency invariant."""


class ConfigError(EchoAuditError):
    """A configuration value is out of its documented range."""


class DegenerateGeometryError(EchoAuditError):
    """A geometric statistic is undefined on this input (zero variance
    or zero denominator)."""


class MissingEmbeddingError(EchoAuditError):
    """An item id could not be resolved against the embedding table."""


class StageError(EchoAuditError):
    """A pipeline stage failed; names the stage for diagnostics."""

    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
