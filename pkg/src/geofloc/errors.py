"""Exception types raised across the package."""


class GeoflocError(ValueError):
    """Base class for all package errors."""


class InvalidDepthError(GeoflocError):
    pass


class OutOfBoundsError(GeoflocError):
    pass


class InvalidRangeError(GeoflocError):
    pass


class InvalidPoseError(GeoflocError):
    pass


class InvalidOriginError(GeoflocError):
    pass


class IntrinsicsMismatchError(GeoflocError):
    pass


class EmptyMatchSetError(GeoflocError):
    pass


class InvalidTemperatureError(GeoflocError):
    pass


class DownsampleNotSupportedError(GeoflocError):
    pass


class InvalidWeightError(GeoflocError):
    pass


class ScanShapeMismatchError(GeoflocError):
    pass


class EmptyHypothesisSpaceError(GeoflocError):
    pass


class BeliefCollapsedError(GeoflocError):
    """All posterior mass was annihilated by the map mask or the scorer."""


class InfeasibleSpecError(GeoflocError):
    pass


class PlacementFailedError(GeoflocError):
    pass


class TrajectoryStuckError(GeoflocError):
    pass


class EmptyRecordsError(GeoflocError):
    pass


class NoSuccessesError(GeoflocError):
    pass


class FormatError(GeoflocError):
    """A file did not match its expected layout."""
