"""Exception types raised by thinshell."""


class ThinShellError(Exception):
    """Base class for all library errors."""


class ChartOutOfRange(ThinShellError):
    pass


class PoleSingularity(ThinShellError):
    pass


class OutsideReach(ThinShellError):
    """Offset radius leaves the region where I - rW is invertible."""


class SingularResolvent(ThinShellError):
    pass


class GridMismatch(ThinShellError):
    pass


class InvalidSurface(ThinShellError):
    pass


class InvalidThinDomain(ThinShellError):
    pass


class NotTangential(ThinShellError):
    pass


class NoConvergence(ThinShellError):
    pass


class NonpositiveWeight(ThinShellError):
    pass


class EigSolverFailure(ThinShellError):
    pass


class TooFewRadialNodes(ThinShellError):
    pass


class InvalidEpsilonList(ThinShellError):
    pass


class SpatialResolutionError(ThinShellError):
    """Spatial error is not small enough to trust an epsilon-rate fit."""


class LinearSolveFailure(ThinShellError):
    pass


class CFLViolation(ThinShellError):
    pass


class ConfigError(ThinShellError):
    pass
