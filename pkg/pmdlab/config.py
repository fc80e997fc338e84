"""
Runtime settings loaded from the environment and an optional .env file.
"""
import logging
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).parent.parent

LOG_FORMAT = "%(asctime)s [%(levelname)8s] %(name)s: %(message)s"


class Settings(BaseSettings):
    """Process-wide settings. Every field can be overridden with PMDLAB_<FIELD>."""

    model_config = SettingsConfigDict(
        env_prefix="PMDLAB_",
        env_file=PROJECT_ROOT / ".env",
        extra="ignore",
    )

    output_dir: Path = Field(Path("runs"), description="Default directory for run artifacts")
    data_dir: Path = Field(PROJECT_ROOT / "data", description="Directory holding shipped data files")
    log_level: str = Field("INFO", description="Root logger level")
    api_port: int = Field(8000, description="Port used by the HTTP service")
    workers: int = Field(1, ge=1, description="Parallel fitness evaluations during evolution")

    @property
    def gridworld_dir(self) -> Path:
        return self.data_dir / "gridworlds"


def configure_logging(level: str) -> None:
    """Configure the root logger once for CLI and service entry points."""
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")


# Global settings instance
settings = Settings()
