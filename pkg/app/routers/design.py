"""
Controller design API router
"""

from fastapi import APIRouter, HTTPException

from app.commands import cmd_design
from app.core.errors import ResampleError, error_detail
from app.models.schemas import DesignReport, ProjectConfig

router = APIRouter()


@router.post("/design", response_model=DesignReport)
def design_controller(config: ProjectConfig):
    """Synthesize the sampled-data controller described by a project document"""
    try:
        return cmd_design(config)
    except ResampleError as e:
        raise HTTPException(status_code=e.http_status, detail=error_detail(e))
