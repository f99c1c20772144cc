import logging
import typing

logger = logging.getLogger(__name__)


class TagPromptError(Exception):
    """Base class of every error raised by this package."""


class DatasetError(TagPromptError):
    """The dataset directory or graph contents are invalid."""


class EpisodeError(TagPromptError):
    """An episode cannot be sampled from the graph."""


class TokenizerError(TagPromptError):
    pass


class EncoderError(TagPromptError):
    """Shapes or inputs do not fit an encoder."""


class BankError(TagPromptError):
    pass


class ObjectiveError(TagPromptError):
    """A loss was called with inputs outside its domain."""


class PromptError(TagPromptError):
    pass


class ConfigError(TagPromptError):
    """A configuration value is unknown, mistyped or out of range."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class CheckpointError(TagPromptError):
    """A checkpoint is corrupted or does not match the expected config."""


class TrainingError(TagPromptError):
    """Training hit a non-finite loss. `snapshot` holds the offending step state."""

    def __init__(self, message: str, snapshot: dict[str, typing.Any]) -> None:
        super().__init__(message)
        self.snapshot = snapshot


class GradientCheckError(TagPromptError):
    pass
