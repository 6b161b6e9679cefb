"""Exception types shared across the toolkit."""


class DriveForgeError(Exception):
    """Base class for all toolkit errors."""


class IoFailure(DriveForgeError):
    """An input stream or file could not be read or written."""


class SchemaError(DriveForgeError):
    """A record does not match the documented schema."""


class TemplateError(DriveForgeError):
    """A prompt template file is missing required placeholders."""


class ParseError(DriveForgeError):
    """An LLM reply could not be split into the expected steps."""


class LlmUnavailable(DriveForgeError):
    """The LLM endpoint (or replay fixture entry) is unreachable."""


class ExhaustedRetries(DriveForgeError):
    """All generation attempts failed to parse."""

    def __init__(self, message: str, last_error: Exception | None = None):
        super().__init__(message)
        self.last_error = last_error


class EmptyPool(DriveForgeError):
    """An instruction template pool has no entries."""


class InsufficientSignals(DriveForgeError):
    """A segment does not carry enough control samples for prediction."""


class ProviderUnavailable(DriveForgeError):
    """An embedding provider cannot produce a vector for the item."""


class DimMismatch(DriveForgeError):
    """Operands disagree on dimensionality."""


class ZeroNorm(DriveForgeError):
    """A vector with zero norm was used where a direction is required."""


class EmptyIndex(DriveForgeError):
    """No candidates remain in the index after exclusion."""


class TooManyFrames(DriveForgeError):
    """More frames than the temporal position table supports."""


class TooManyMedia(DriveForgeError):
    """More media items than the media position table supports."""


class BudgetUnderflow(DriveForgeError):
    """Definition plus current instance alone exceed the token budget."""


class FormatError(DriveForgeError):
    """A binary container is malformed (magic, length, trailing bytes)."""


class ConfigError(DriveForgeError):
    """The pipeline configuration is invalid."""


class StageError(DriveForgeError):
    """A pipeline stage cannot run (missing or unreadable inputs)."""
