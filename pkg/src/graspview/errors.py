"""Exception types raised across the package."""


class GraspViewError(Exception):
    """Base class for all package errors."""


class InsufficientNeighbors(GraspViewError):
    pass


class DegenerateNeighborhood(GraspViewError):
    pass


class EmptyMesh(GraspViewError):
    pass


class NotWatertight(GraspViewError, ValueError):
    pass


class GimbalDegenerate(GraspViewError):
    pass


class EmptyRange(GraspViewError, ValueError):
    pass


class NoContact(GraspViewError):
    pass


class MissingLabel(GraspViewError):
    pass


class ZeroVector(GraspViewError, ValueError):
    pass


class ThresholdMismatch(GraspViewError, ValueError):
    pass


class FormatVersionMismatch(GraspViewError):
    pass


class CorruptFile(GraspViewError):
    pass


class EmptyAvailableSet(GraspViewError, ValueError):
    pass


class MissingMap(GraspViewError, ValueError):
    pass


class NoCandidatesFound(GraspViewError):
    pass


class NoPositiveGraspOnObject(GraspViewError):
    pass


class ConfigError(GraspViewError, ValueError):
    pass


class PipelineError(GraspViewError):
    pass
