"""Exception types shared across the package."""


class MulticueError(Exception):
    """Base class for all package errors."""


class FrameFormatError(MulticueError):
    """A frame file or frame pair violates the on-disk format contract."""


class DimensionMismatchError(MulticueError):
    """Two per-pixel maps that must be registered have different shapes."""


class UnavailableDepthError(MulticueError):
    """An operation required a measured depth but the pixel is unavailable."""


class EmptyAccumulatorError(MulticueError):
    """finalize() was called before any frame was accumulated."""


class EmptyTemplateError(MulticueError):
    """Template extraction produced zero features across all channels."""


class ConfigMismatchError(MulticueError):
    """A template database was built under a different configuration."""


class DatabaseFormatError(MulticueError):
    """A template database file is corrupt, truncated or of unknown version."""


class LocalizationError(MulticueError):
    """No usable feature depth was available to place a detection in 3D."""


class SceneSpecError(MulticueError):
    """A synthetic scene specification is invalid."""
