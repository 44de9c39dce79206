"""
FastAPI dependencies for settings and the served guidance model.
"""
from fastapi import Depends, HTTPException, status
from functools import lru_cache
from pathlib import Path

from app.config import Settings, settings
from app.services.mlp import MlpModel, read_model


def get_settings() -> Settings:
    """
    FastAPI dependency returning the process settings.

    Tests override it through ``app.dependency_overrides``.
    """
    return settings


@lru_cache(maxsize=4)
def _load_model(path: str, mtime: float) -> MlpModel:
    return read_model(path)


async def get_guidance_model(app_settings: Settings = Depends(get_settings)) -> MlpModel:
    """
    FastAPI dependency loading the model named by ``settings.model_path``.
    The file is read once and reloaded only when it changes on disk.

    Raises:
        HTTPException: 503 if no model is configured; a missing file surfaces as 404.
    """
    if not app_settings.model_path:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="No guidance model configured. Set MODEL_PATH.",
        )
    path = Path(app_settings.model_path)
    mtime = path.stat().st_mtime if path.is_file() else 0.0
    return _load_model(str(path), mtime)
