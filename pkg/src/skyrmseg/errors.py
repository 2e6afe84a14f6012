"""Exception hierarchy shared by every subsystem.

The CLI maps each family onto its own exit code, so raise the most
specific class that applies.
"""


class SkyrmError(Exception):
    """Base class for all package errors."""


class ShapeError(SkyrmError, ValueError):
    """Tensor dimensions are inconsistent with an operation."""


class ConfigError(SkyrmError, ValueError):
    """Invalid hyperparameter, config key or value."""


class DataError(SkyrmError, ValueError):
    """Malformed dataset content (bad mask values, mismatched files...)."""


class FormatError(DataError):
    """Unsupported or malformed image file."""


class GenerationError(DataError):
    """Synthetic data could not be generated with the requested settings."""


class CheckpointError(DataError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    """A stored tensor does not match the shape implied by the config."""

    def __init__(self, name, expected, found):
        self.name = name
        self.expected = tuple(expected) if expected is not None else None
        self.found = tuple(found) if found is not None else None
        super().__init__(
            f"tensor {name!r}: expected shape {self.expected}, found {self.found}"
        )


class TrainingAborted(SkyrmError, RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


class InternalError(SkyrmError, RuntimeError):
    """Broken internal invariant (stale tape, corrupt argmax index...)."""
