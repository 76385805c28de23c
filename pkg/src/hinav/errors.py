"""Exception types raised across the package."""


class NavError(Exception):
    """Base class for all hinav errors."""


class EmptyPoseList(NavError, ValueError):
    pass


class DuplicateNode(NavError, ValueError):
    pass


class ForwardBlocked(NavError):
    """No capture lies close enough to the nominal forward point."""


class EmptyCell(NavError, ValueError):
    pass


class NonRectangular(NavError, ValueError):
    pass


class OpenBoundary(NavError, ValueError):
    pass


class PoseInsideWall(NavError, ValueError):
    pass


class ShapeMismatch(NavError, ValueError):
    pass


class NonFinite(NavError, ValueError):
    pass


class NoTargetStates(NavError, ValueError):
    pass


class DisconnectedPath(NavError, ValueError):
    pass


class UnknownState(NavError, ValueError):
    pass


class ConfigInvalid(NavError, ValueError):
    pass


class CorridorFullyBlocked(NavError, ValueError):
    pass


class FormatError(NavError, ValueError):
    """A file does not carry the expected magic header or layout."""
