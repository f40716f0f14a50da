"""Exception hierarchy shared by all romkit modules."""


class RomkitError(Exception):
    """Base class for every error raised by romkit."""


class InvalidArgument(RomkitError, ValueError):
    pass


class DimensionMismatch(RomkitError, ValueError):
    pass


class NonPhysicalState(RomkitError):
    """A state with non-positive density or internal energy reached the RHS."""


class NoConvergence(RomkitError):
    """An iterative solver hit its iteration cap.

    ``best`` holds the iterate with the smallest residual seen and
    ``history`` the residual norms per iteration.
    """

    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = list(history or [])


class SingularJacobian(RomkitError):
    pass


class GmresBreakdown(RomkitError):
    pass


class RankDeficientNormalEquations(RomkitError):
    pass


class EmptySnapshots(RomkitError, ValueError):
    pass


class InvalidCriterion(RomkitError, ValueError):
    pass


class OverlappingBlocks(RomkitError, ValueError):
    pass


class NonOrthonormalBlock(RomkitError, ValueError):
    pass


class DenseJacobianUnavailable(RomkitError):
    pass


class ZeroSpectralRadius(RomkitError):
    pass


class RankDeficientSampling(RomkitError):
    pass


class TimeGridMismatch(RomkitError, ValueError):
    pass


class AllRunsUnstable(RomkitError):
    pass


class NonDiagonalizable(RomkitError):
    pass


class AssumptionViolated(RomkitError):
    pass


class QuadratureNotConverged(RomkitError):
    pass


class InvalidWindow(RomkitError, ValueError):
    pass


class Unstable(RomkitError):
    """A ROM trajectory diverged (non-finite or oversized coordinates)."""
