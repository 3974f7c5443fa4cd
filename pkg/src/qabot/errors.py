"""Exception hierarchy shared by all qabot modules."""


class QabotError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(QabotError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(QabotError):
    """Backward was requested on a tensor not recorded on any computation tape."""


class ContractError(QabotError):
    """A caller violated an operation's precondition."""


class ConfigError(QabotError):
    """A model or training configuration value is invalid."""


class DatasetError(QabotError):
    """A dataset could not be ingested or split."""


class ParseError(DatasetError):
    """A dataset line is malformed. Carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EncodingError(DatasetError):
    """Input bytes are not valid UTF-8. Carries the failing byte offset."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"byte {byte_offset}: {message}")
        self.byte_offset = byte_offset


class VocabularyError(QabotError):
    """A token id is outside the vocabulary."""


class TrainingError(QabotError):
    """Training aborted (non-finite loss or gradient)."""


class CheckpointError(QabotError):
    """A checkpoint file could not be written or read."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version does not match this build."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ended before all declared records were read."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload does not match its stored checksum."""
