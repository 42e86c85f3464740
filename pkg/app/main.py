"""
FastAPI service for sampled-data controller redesign
Main application entry point
"""

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from contextlib import asynccontextmanager
import uvicorn
import logging

# Import routers
from app.routers import curve, design, pendulum, simulate
from app.core.config import configure_logging, settings

# Setup logging
configure_logging()
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager"""
    logger.info(f"Starting {settings.project_name}...")
    yield
    logger.info(f"Shutting down {settings.project_name}...")


# Create FastAPI app
app = FastAPI(
    title=settings.project_name,
    description="Sampled-data redesign of analog controllers under intermittent sampling",
    version=settings.version,
    lifespan=lifespan,
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(design.router, prefix=settings.api_v1_str, tags=["Design"])
app.include_router(curve.router, prefix=settings.api_v1_str, tags=["Curve"])
app.include_router(simulate.router, prefix=settings.api_v1_str, tags=["Simulation"])
app.include_router(pendulum.router, prefix=settings.api_v1_str, tags=["Pendulum"])


@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "message": settings.project_name,
        "version": settings.version,
        "status": "active",
    }


@app.get("/api/v1/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "service": settings.project_name,
        "version": settings.version,
    }


if __name__ == "__main__":
    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=8000,
        reload=True,
        log_level="info",
    )
