"""
Domain exceptions raised by the solver services.
"""
from typing import Any, Dict, Optional


class WGError(Exception):
    """Base class for every failure raised by the weak Galerkin services."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.diagnostics = diagnostics or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "diagnostics": self.diagnostics,
        }


class MeshParameterError(WGError):
    pass


class QuadratureError(WGError):
    pass


class AssemblyError(WGError):
    pass


class SolverError(WGError):
    """Breakdown, indefiniteness or non-convergence of a linear solve."""


class NormError(WGError):
    pass


class ProblemError(WGError):
    pass
