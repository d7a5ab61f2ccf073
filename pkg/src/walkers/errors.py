"""Exception hierarchy shared by all walkers modules."""


class WalkersError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(WalkersError, ValueError):
    pass


class InvalidInputError(WalkersError, ValueError):
    pass


class OutOfBoundsError(WalkersError, IndexError):
    pass


class InvalidSpecError(InvalidParameterError):
    pass


# raster I/O

class RasterIOError(WalkersError, OSError):
    pass


class MissingFileError(RasterIOError, FileNotFoundError):
    pass


class UnsupportedFormatError(RasterIOError):
    pass


class MalformedImageError(RasterIOError):
    pass


# network weights

class InvalidWeightsError(WalkersError, ValueError):
    pass


class WeightsFormatError(WalkersError, ValueError):
    pass


class BadMagicError(WeightsFormatError):
    pass


class VersionMismatchError(WeightsFormatError):
    pass


class TruncatedPayloadError(WeightsFormatError):
    pass


# pipeline outcomes

class NoSeedsError(WalkersError):
    """No soft-contour pixel passed the seed threshold."""


class TrackerDeadError(WalkersError):
    """A dead tracker was asked to advance."""


class EmptyRefinedMapError(WalkersError):
    pass


class ZeroGradientError(WalkersError):
    pass


class SeparationRejected(WalkersError):
    """A separation line could not be built; ``reason`` names why."""

    ARM_TOO_LONG = "ArmTooLong"
    NO_RECONNECT_PAIR = "NoReconnectPair"

    def __init__(self, reason, message=""):
        super().__init__(message or reason)
        self.reason = reason


class NoClosureError(WalkersError):
    """No binarization threshold closes the contour for a given line."""


class NoClosedContourError(WalkersError):
    """Every candidate anchor was exhausted: the shape stays open."""


class NotClosedError(WalkersError):
    """A contour encloses no region and cannot be filled."""
