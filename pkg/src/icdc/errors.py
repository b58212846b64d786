"""Exception types shared across the package."""


class IcdcError(Exception):
    """Base class for all package errors."""


class GeometryError(IcdcError, ValueError):
    pass


class BehindCamera(GeometryError):
    pass


class OutOfBounds(GeometryError):
    pass


class OutOfBoundsInJ(OutOfBounds):
    pass


class PointAtInfinity(GeometryError):
    pass


class InvalidDepth(GeometryError):
    pass


class DegenerateGeometry(GeometryError):
    pass


class DegeneratePointcloud(DegenerateGeometry):
    pass


class TranslationUndefined(GeometryError):
    """Raised when a translation direction cannot be determined."""


class UnknownFrame(IcdcError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyTrajectory(IcdcError, ValueError):
    pass


class TooFewCorrespondences(IcdcError, ValueError):
    pass


class NoConsensus(IcdcError, RuntimeError):
    pass


class NumericallyDegenerate(IcdcError, ValueError):
    pass


class EmptyGrid(IcdcError, ValueError):
    pass


class FormatError(IcdcError, ValueError):
    """Malformed input file."""
