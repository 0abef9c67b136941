"""Exception hierarchy used across the package."""


class SipError(Exception):
    """Base class for all package errors."""


class InstanceError(SipError, ValueError):
    """An instance document violates a structural or modelling assumption."""


class SolverError(SipError, RuntimeError):
    """The conic engine failed to produce a usable solution."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class CertificationFailed(SipError):
    """An oracle could not certify its answer to the requested relative gap."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InfeasibleY(SipError):
    """The lower-level set is empty at the working tolerance."""


class ConeMembershipFailed(SipError):
    """A managed atom set no longer generates the current dual iterate."""


class RestrictionInfeasible(SipError):
    """The single-level conic restriction has no feasible point."""


class InnerSetEmpty(SipError):
    """The inner approximation of the feasible set is empty."""
