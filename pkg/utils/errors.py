"""Exception hierarchy shared by the simulation, learning and experiment packages."""


class StpError(Exception):
    """Base class for every error raised by this project."""


class InvalidNetworkError(StpError, ValueError):
    pass


class NetworkTooSmallError(StpError, ValueError):
    pass


class UnknownSegmentError(StpError, KeyError):
    pass


class HorizonError(StpError, ValueError):
    pass


class InvalidEventError(StpError, ValueError):
    pass


class EventOverlapError(InvalidEventError):
    pass


class InvalidTrajectoryError(StpError, ValueError):
    pass


class EmptyTableError(StpError):
    """Raised when an aggregate is requested from a table with no live entries."""


class InsufficientHistoryError(StpError):
    """Raised when the RSU cannot assemble a feature vector yet."""


class DegenerateBinningError(StpError, ValueError):
    pass


class DimensionMismatchError(StpError, ValueError):
    pass


class InvalidConfigError(StpError, ValueError):
    pass
