"""
Configuration settings for the application
"""

import logging

from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import List

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


class Settings(BaseSettings):
    # API Settings
    api_v1_str: str = "/api/v1"
    project_name: str = "Resample API"
    version: str = "1.0.0"

    # CORS
    allowed_origins: List[str] = ["*"]

    # Verbosity, read from RESAMPLE_LOG
    log: str = "WARNING"

    # Command defaults
    output_dir: str = "out"
    curve_workers: int = 4
    default_seed: int = 0

    model_config = SettingsConfigDict(env_prefix="RESAMPLE_", env_file=".env", extra="ignore")


# Global settings instance
settings = Settings()


def configure_logging() -> int:
    """Root logging at settings.log; shared by the CLI and the API"""
    level = logging.getLevelName(settings.log.upper())
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)
    return level
