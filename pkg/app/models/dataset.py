"""
Pydantic models for dataset provenance.
"""
from pydantic import BaseModel, Field
from typing import Dict, List, Optional, Union

DATASET_FORMAT = "mecp-dataset v1"


class ExtremalSummary(BaseModel):
    """Outcome of one terminal sample."""
    index: int
    horizon: Optional[float] = Field(None, description="Truncation horizon T; null when the build failed.")
    conjugate_time: Optional[float] = None
    records: int = 0
    error: Optional[str] = None


class DatasetMeta(BaseModel):
    """Metadata line stored with every dataset file."""
    problem_id: str
    state_dim: int
    control_dim: int
    constraint_dim: int
    t_f: float
    problem_params: Dict[str, Union[float, bool]] = Field(default_factory=dict)
    n_samples: int
    dt: float
    seed: int
    sampling_mode: str
    generator_version: str
    extremals: List[ExtremalSummary] = Field(default_factory=list)

    @property
    def n_built(self) -> int:
        return sum(1 for e in self.extremals if e.error is None)

    @property
    def n_failed(self) -> int:
        return sum(1 for e in self.extremals if e.error is not None)

    @property
    def n_conjugate_truncated(self) -> int:
        return sum(1 for e in self.extremals if e.conjugate_time is not None)

    class Config:
        extra = "forbid"


class DatasetSummary(BaseModel):
    """What ``generate`` reports."""
    problem_id: str
    extremals_built: int
    extremals_failed: int
    conjugate_truncated: int
    records: int


class CoverageReport(BaseModel):
    """How many extremal start states land in a state box at one time-to-go."""
    problem_id: str
    t_go: float
    samples: int
    failed: int = Field(0, description="Samples whose backward flow stopped before t_go.")
    hits: int = 0
    suggested_free_ranges: Optional[List[List[float]]] = Field(None, description="Bounding box of the hits, widened by the margin.")
    suggested_multiplier_ranges: Optional[List[List[float]]] = None

    @property
    def hit_rate(self) -> float:
        return self.hits / self.samples if self.samples else 0.0
