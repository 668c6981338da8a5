"""Exception types shared across the package."""

from __future__ import annotations


class MnpError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(MnpError, ValueError):
    """A physical constant, grid, or solver parameter is out of range."""


class MeshError(MnpError):
    """Triangulation violates a structural requirement (e.g. circumcenter
    outside its triangle, degenerate triangle, broken connectivity)."""


class StiffnessError(MnpError):
    """The implicit integrator underflowed its step size.

    Attributes
    ----------
    time : float
        Integration time at which the failure occurred.
    """

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class DivergenceError(MnpError):
    """The state became non-finite during integration."""


class SteadyStateError(MnpError):
    """Stationary-state computation did not converge."""


class InvalidInputError(MnpError, ValueError):
    """Mismatched or malformed data passed between pipeline stages."""
