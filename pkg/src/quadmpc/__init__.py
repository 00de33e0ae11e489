"""Cascade MPC for quadcopter trajectory tracking with time-varying thrust-derived bounds."""

from .exceptions import (
    AttitudeSingularityError,
    FeasibilityViolatedError,
    InfeasibleReferenceError,
    InfeasibleStartError,
    InvalidParameterError,
    NoSolutionError,
    QuadMpcError,
    SingularReferenceError,
    UnsupportedSpectrumError,
)

__version__ = "0.1.0"
