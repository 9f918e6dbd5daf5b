"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GuingError(Exception):
    """Base class for all package-specific errors."""


class ZeroVector(GuingError):
    """Vector has (numerically) zero L2 norm and cannot be normalized."""


class DimensionMismatch(GuingError):
    """Vectors or matrices with incompatible dimensions were combined."""


class MixedDimensions(GuingError):
    """A collection of vectors does not share a single dimension."""


class DuplicateId(GuingError):
    """An id occurs more than once where uniqueness is required."""


class EmptyInput(GuingError):
    """An operation requires at least one element."""


class BoxOutOfBounds(GuingError):
    """A bounding box extends beyond the image it refers to."""


class TooFewPoints(GuingError):
    """Fewer points than requested clusters."""


class BadNprobe(GuingError):
    """nprobe outside [1, n_cells]."""


class BadMagic(GuingError):
    """File does not start with the expected magic bytes."""


class BadVersion(GuingError):
    """File format version is not supported."""


class Truncated(GuingError):
    """File ended before the declared payload was complete."""


class NonFiniteVector(GuingError):
    """A stored vector contains NaN or infinity."""


class NonFiniteLoss(GuingError):
    """Training produced a NaN or infinite loss; aborted with diagnostic."""


class MissingTruth(GuingError):
    """A ranked list has no ground-truth entry in the truth map."""


class EncoderUnreachable(GuingError):
    """The encoder sidecar did not answer."""


class ConfigError(GuingError):
    """A config file or CLI input could not be parsed."""


class DegenerateLabelsWarning(UserWarning):
    """A class label is absent from the training data."""
