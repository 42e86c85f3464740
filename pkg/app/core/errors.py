"""
Exception hierarchy shared by the engine, the CLI and the HTTP routers
"""

from typing import Any, Dict, Optional


class ResampleError(Exception):
    """Base class for all errors raised by the package"""

    exit_code: int = 1
    http_status: int = 500


class DimensionError(ResampleError, ValueError):
    """Inconsistent matrix or signal dimensions"""

    http_status = 422


class InvalidInputError(ResampleError, ValueError):
    """Input data violates a documented precondition"""

    http_status = 422


class NotHurwitzError(ResampleError, ValueError):
    """A matrix required to be Hurwitz is not"""

    http_status = 422


class RiccatiError(ResampleError):
    """No stabilizing solution of an algebraic Riccati equation"""

    http_status = 422


class AlgebraicLoopError(ResampleError):
    """Ill-posed feedthrough loop in an interconnection"""

    http_status = 422


class NotStabilizingError(ResampleError):
    """The nominal controller does not stabilize the plant"""

    http_status = 422


class StrictCausalityError(ResampleError):
    """A sampled-data parameter failed the strict-causality probe"""

    http_status = 422


class InfeasibleGammaError(ResampleError):
    """The requested performance level is below the attainable optimum"""

    exit_code = 2
    http_status = 409

    def __init__(self, message: str, certificate: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.certificate = certificate or {}


class ConsistencyError(ResampleError):
    """Two independent numerical routes disagree"""

    exit_code = 3
    http_status = 500


def error_detail(exc: ResampleError) -> Dict[str, Any]:
    """JSON-ready description of an engine error for HTTP responses"""
    detail: Dict[str, Any] = {"error": type(exc).__name__, "message": str(exc)}
    certificate = getattr(exc, "certificate", None)
    if certificate:
        detail["certificate"] = certificate
    return detail
