"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: InvalidConfig -> 2,
MalformedContainer -> 3, KeyMismatch -> 4.
"""


class ChunkFuseError(Exception):
    """Base class for all pipeline errors."""


class InvalidConfig(ChunkFuseError):
    """A configuration value violates its documented constraints."""


class InvalidSpec(ChunkFuseError):
    """A synthetic scene description is empty or degenerate."""


class NoOverlap(ChunkFuseError):
    """Two chunks share no frame indices."""


class NotEnoughPoints(ChunkFuseError):
    """Fewer than the minimum positive-weight correspondences."""


class DegenerateConfiguration(ChunkFuseError):
    """Point configuration is rank-deficient (coincident or collinear)."""


class InsufficientSupport(ChunkFuseError):
    """A tracklet does not cover enough of the overlap window."""


class WindowTooShort(ChunkFuseError):
    """Boundary reconstruction needs a window of at least two frames."""


class MalformedContainer(ChunkFuseError):
    """A container directory fails structural or byte-level validation."""


class KeyMismatch(ChunkFuseError):
    """Predicted and ground-truth trajectory tables disagree on their keys."""
