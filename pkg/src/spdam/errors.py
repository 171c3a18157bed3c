"""Exception types raised across the package."""


class SpdamError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(SpdamError, ValueError):
    pass


class NotSymmetric(SpdamError, ValueError):
    pass


class DimensionMismatch(SpdamError, ValueError):
    pass


class BaseMismatch(SpdamError, ValueError):
    """A tangent vector was used at a base point other than its own."""


class EmptySample(SpdamError, ValueError):
    pass


class BandwidthOutOfRange(SpdamError, ValueError):
    pass


class DegenerateDensity(SpdamError, ArithmeticError):
    """Estimated marginal density vanishes at a grid node (no data nearby)."""


class OutOfDomain(SpdamError, ValueError):
    pass


class NoConvergence(SpdamError, RuntimeError):
    """Backfitting did not reach the requested tolerance.

    The partially converged state is kept on ``diagnostics`` so callers can
    report it.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
