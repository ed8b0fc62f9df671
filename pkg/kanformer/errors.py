class KanformerError(Exception):
    """Base class for every error raised by the library."""


class ShapeError(KanformerError, ValueError):
    pass


class ContractError(KanformerError, ValueError):
    """A precondition of an operation was violated."""


class DomainError(KanformerError, ValueError):
    pass


class ConfigError(KanformerError):
    pass


class FormatError(KanformerError):
    """A data file does not follow its binary or text layout."""


class GenerationError(KanformerError):
    pass


class NonFiniteError(KanformerError, FloatingPointError):
    pass


class TrainingError(KanformerError):
    pass


class GradcheckError(KanformerError):
    pass


class CheckpointError(KanformerError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointSizeError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass
