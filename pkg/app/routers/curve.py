"""
Gamma versus admissible sampling interval API router
"""

from fastapi import APIRouter, HTTPException

from app.commands import cmd_curve
from app.core.errors import ResampleError, error_detail
from app.models.schemas import CurveReport, CurveRequest

router = APIRouter()


@router.post("/curve", response_model=CurveReport)
def gamma_curve(request: CurveRequest):
    """Longest admissible sampling interval over a gamma grid"""
    try:
        return cmd_curve(
            request.config,
            gamma_min=request.gamma_min,
            gamma_max=request.gamma_max,
            points=request.points,
        )
    except ResampleError as e:
        raise HTTPException(status_code=e.http_status, detail=error_detail(e))
