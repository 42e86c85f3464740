"""
Closed-loop simulation API router
"""

from typing import Optional

from fastapi import APIRouter, HTTPException, Query

from app.commands import cmd_simulate
from app.core.errors import ResampleError, error_detail
from app.models.schemas import ProjectConfig, SimSummary

router = APIRouter()


@router.post("/simulate", response_model=SimSummary)
def simulate_closed_loop(
    config: ProjectConfig,
    include_trace: bool = Query(False),
    seed: Optional[int] = Query(None),
):
    """Simulate the designed controller; trace rows only on request"""
    try:
        return cmd_simulate(config, seed=seed, include_trace=include_trace)
    except ResampleError as e:
        raise HTTPException(status_code=e.http_status, detail=error_detail(e))
