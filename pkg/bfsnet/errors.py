"""
Error types shared by every bfsnet module.

Each error carries the process exit code the CLI reports for it:
usage errors exit 2, data errors 3, numerical errors 4.
"""


class BfsError(Exception):
    """Base class for all bfsnet errors."""

    exit_code = 1


class UsageError(BfsError):
    """Bad invocation: unknown command, missing or inconsistent options."""

    exit_code = 2


class DataError(BfsError):
    """Input data violates a contract (values, shapes, files)."""

    exit_code = 3


class NumericalError(BfsError):
    """A numerical procedure failed (divergence, singular systems)."""

    exit_code = 4


class DomainError(DataError, ValueError):
    """Argument outside the domain of an operation."""


class DegenerateInputError(DataError, ValueError):
    """Input carries no usable signal (constant spectrum, zero variance)."""


class ShapeError(DataError, ValueError):
    """Array lengths or matrix shapes do not agree."""


class GridContractError(DataError, ValueError):
    """Spectrum grid does not match what a trained network expects."""


class InsufficientRangeError(DataError, ValueError):
    """Frequency scanning range is too short to feed the network."""


class SeedCollisionError(DataError):
    """Two corpora would draw their noise from the same seed stream."""


class ContainerError(DataError):
    """Binary container could not be read."""


class BadMagicError(ContainerError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(ContainerError):
    """Known container family, unsupported version."""


class TruncatedFileError(ContainerError):
    """File ends before all declared content was read."""


class DimensionMismatchError(ContainerError):
    """Declared dimensions disagree with the content or metadata."""


class TrainingDivergedError(NumericalError):
    """
    Training produced a non-finite error or an unsolvable update.

    Args:
        message: Description of the failure
        log: TrainLog collected up to the failure
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class PeakOverlapWarning(UserWarning):
    """Noise-floor region overlaps the detected Brillouin peak."""


class TargetRangeWarning(UserWarning):
    """Normalized target outside [0, 1] passed through."""
