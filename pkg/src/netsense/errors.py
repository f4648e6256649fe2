"""Exception types raised across the package."""


class NetsenseError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(NetsenseError):
    """A target coincides with a BS so the angle is undefined."""


class SamplingFailed(NetsenseError):
    """Monte-Carlo draws kept producing degenerate geometry."""


class ShapeError(NetsenseError, ValueError):
    pass


class SingularFim(NetsenseError, ArithmeticError):
    pass


class RateUnbounded(NetsenseError, ArithmeticError):
    """Compression noise covariance is singular, so the rate diverges."""


class BuilderError(NetsenseError):
    pass


class DegenerateAngles(NetsenseError):
    """Steering matrix is rank deficient (coincident angles)."""


class AoaFailure(NetsenseError):
    """MUSIC found fewer peaks than targets.

    ``partial`` holds whatever angles were found.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class IoError(NetsenseError, OSError):
    """An output file could not be written."""
