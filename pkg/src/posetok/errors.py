"""Exception types shared across the package."""


class PosetokError(Exception):
    """Base class for all package errors."""


class InvalidArgument(PosetokError, ValueError):
    pass


class ShapeError(PosetokError, ValueError):
    pass


class DegenerateRotation(PosetokError, ValueError):
    pass


class DegenerateConfiguration(PosetokError, ValueError):
    pass


class InvalidSkeleton(PosetokError, ValueError):
    pass


class ConfigError(PosetokError, ValueError):
    pass


class DataError(PosetokError, ValueError):
    """Raised when a dataset record cannot be parsed; carries the record index."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


class BehindCamera(PosetokError, ValueError):
    """Some points have non-positive depth in the camera frame."""

    def __init__(self, indices):
        self.indices = [int(i) for i in indices]
        super().__init__(f"points behind camera: {self.indices}")
