"""
Pendulum example API router
"""

from fastapi import APIRouter, HTTPException, Query

from app.commands import cmd_pendulum
from app.core.errors import ResampleError, error_detail
from app.models.schemas import PendulumReport, ProjectConfig
from app.presets import pendulum

router = APIRouter()


@router.get("/pendulum", response_model=PendulumReport)
def pendulum_report(points: int = Query(40, ge=2, le=400)):
    """Headline numbers of the pendulum example"""
    try:
        return cmd_pendulum(points=points)
    except ResampleError as e:
        raise HTTPException(status_code=e.http_status, detail=error_detail(e))


@router.get("/pendulum/config", response_model=ProjectConfig)
def pendulum_config():
    """The pendulum example as a project document"""
    return pendulum.config()


@router.get("/schema")
def project_schema():
    """JSON schema of the project document"""
    return ProjectConfig.model_json_schema()
