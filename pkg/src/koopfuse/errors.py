"""Exception hierarchy shared by all koopfuse modules."""


class KoopfuseError(Exception):
    """Base class for every error raised deliberately by koopfuse."""


class ValidationError(KoopfuseError, ValueError):
    """Input data or configuration violates a documented precondition."""


class NumericalError(KoopfuseError, ArithmeticError):
    """A numerical stage failed (divergence, singular systems, no match)."""


class IntegrationError(NumericalError):
    """The PDE integrator produced non-finite or runaway field values."""

    def __init__(self, message, trajectory=None, time=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.time = time


class CoverageError(NumericalError):
    """An evaluation point lies outside the support of every dictionary node."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MatchError(NumericalError):
    """No eigenvalue pair agrees within the matching tolerance."""


class RegistrationError(NumericalError):
    """The registration constant cannot be determined from the joint data."""


class OutsideHullError(NumericalError):
    """An interpolation query fell outside the triangulated region."""
