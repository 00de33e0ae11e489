"""Exception hierarchy for the control stack."""


class QuadMpcError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(QuadMpcError, ValueError):
    """A parameter is outside its admissible range."""


class InfeasibleReferenceError(QuadMpcError):
    """The reference thrust leaves the band [eps1, t_max - eps2]."""


class SingularReferenceError(QuadMpcError):
    """The reference frame cannot be built (thrust axis parallel to heading)."""


class AttitudeSingularityError(QuadMpcError):
    """The desired attitude construction hits its singular configuration."""


class UnsupportedSpectrumError(QuadMpcError):
    """The axis model is not marginally stable with one simple unit eigenvalue."""


class NoSolutionError(QuadMpcError):
    """A Lyapunov equation has no unique solution (closed loop not Schur)."""


class FeasibilityViolatedError(QuadMpcError):
    """The bound schedule violates the recursive-feasibility condition."""


class InfeasibleStartError(QuadMpcError):
    """The initial outer state already violates its own bound."""

    def __init__(self, message: str, component: str, value: float, bound: float):
        super().__init__(message)
        self.component = component
        self.value = value
        self.bound = bound
