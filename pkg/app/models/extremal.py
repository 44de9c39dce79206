"""
Pydantic models for the extremal endpoint.
"""
from pydantic import BaseModel, Field
from typing import Dict, List, Optional


class ExtremalRequest(BaseModel):
    """A terminal sample given by its free terminal coordinates and multipliers."""
    free: List[float] = Field(default_factory=list, description="Free terminal-state coordinates in chart order.")
    nu: List[float] = Field(..., description="Terminal Lagrange multipliers.")
    dt: Optional[float] = Field(None, gt=0, description="Sample spacing in time-to-go; defaults to t_f / 100.")
    params: Dict[str, float] = Field(default_factory=dict, description="Problem parameter overrides.")

    class Config:
        extra = "forbid"


class ExtremalSampleView(BaseModel):
    t_g: float
    x: List[float]
    p: List[float]
    u: List[float]
    cost_to_go: float


class ExtremalResponse(BaseModel):
    problem_id: str
    x_f: List[float]
    p_f: List[float]
    horizon: float = Field(..., description="Truncation horizon T = min(t_f, T_c).")
    conjugate_time: Optional[float] = None
    samples: List[ExtremalSampleView]
    det_trace: List[List[float]] = Field(..., description="(sigma, det dX/dq) at every accepted step.")
