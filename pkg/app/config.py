"""
Configuration management using Pydantic Settings.
Loads process settings from environment variables and the .env file, and
run configs from YAML files.
"""
from pydantic import ValidationError
from pydantic_settings import BaseSettings
from pathlib import Path
from typing import Optional, Union
import logging

import yaml

from app.exceptions import ArtifactNotFoundError, ConfigError
from app.models.config import RunConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Logging level name for the CLI and the API
    log_level: str = "INFO"

    # Worker processes for extremal generation and Monte Carlo
    # WORKERS in the environment overrides the default; --workers overrides both
    workers: int = 1

    # Where CLI outputs go when no explicit path is given
    output_dir: str = "runs"

    # Model served by POST /guidance/control
    model_path: Optional[str] = None

    # Directory with the shipped run configs (one YAML per problem)
    config_dir: str = "configs"

    def get_config_dir(self) -> Path:
        """Resolve ``config_dir`` against the working directory."""
        path = Path(self.config_dir)
        if not path.is_absolute():
            path = Path.cwd() / path
        return path.resolve()

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False


# Global settings instance
settings = Settings()


def format_validation_error(e: ValidationError, prefix: str = "") -> str:
    """Every failing field as ``dotted.path: message``."""
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{prefix}{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_run_config(payload: dict) -> RunConfig:
    """
    Raises:
        ConfigError: listing every invalid field by its dotted path.
    """
    if not isinstance(payload, dict):
        raise ConfigError("run config must be a mapping at the top level")
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a YAML run config.

    Raises:
        ArtifactNotFoundError: if the file does not exist.
        ConfigError: on YAML syntax errors or invalid fields.
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactNotFoundError(f"config not found: {path}")
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (yaml.YAMLError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.debug(f"Loaded run config {path}")
    return parse_run_config(payload or {})


def shipped_config_path(problem_id: str) -> Path:
    return settings.get_config_dir() / f"{problem_id}.yaml"
