"""
Pydantic model for run manifests.
"""
from datetime import datetime
from pydantic import BaseModel, Field
from typing import Dict, List, Optional


class RunManifest(BaseModel):
    """Provenance of one CLI invocation, written next to its outputs."""
    subcommand: str
    config_path: Optional[str] = None
    inputs: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    seed: Optional[int] = None
    version: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    exit_code: int = 0
    summary: Dict[str, object] = Field(default_factory=dict)
