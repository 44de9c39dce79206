"""
Pydantic models for the guidance endpoint.
"""
from pydantic import BaseModel, Field
from typing import List


class ControlRequest(BaseModel):
    t_g: float = Field(..., gt=0, description="Time-to-go.")
    x: List[float] = Field(..., description="Current state.")

    class Config:
        extra = "forbid"


class ControlResponse(BaseModel):
    u: List[float]
    latency_ms: float = Field(..., description="Wall-clock time of the forward pass.")
