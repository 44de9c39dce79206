"""
Pydantic models for simulation, Monte Carlo and verification reports.
"""
from pydantic import BaseModel, Field
from typing import Dict, List, Optional


class RunSummary(BaseModel):
    """One closed-loop run, as written to the summary CSV."""
    run_id: int
    terminal_error: float
    terminal_components: List[float]
    effort: float
    aborted: bool = False
    abort_reason: Optional[str] = None
    arrival_offset: Optional[float] = Field(None, description="Time of closest approach minus the scheduled final time.")
    drawn: Dict[str, float] = Field(default_factory=dict, description="Dispersed quantities of this run.")


class MonteCarloSummary(BaseModel):
    test: str
    n_runs: int
    n_aborted: int = 0
    terminal_error_max: Optional[float] = None
    terminal_error_mean: Optional[float] = None
    component_max: List[float] = Field(default_factory=list)
    component_mean: List[float] = Field(default_factory=list)
    effort_mean: Optional[float] = None
    effort_max: Optional[float] = None
    arrival_offset_max: Optional[float] = None
    latency_median: Optional[float] = None
    latency_max: Optional[float] = None


class ScenarioReport(BaseModel):
    """``simulate`` output for one scenario."""
    scenario: str
    controller: str
    terminal_error: float
    terminal_components: List[float]
    effort: float
    aborted: bool
    abort_reason: Optional[str] = None
    arrival_time: Optional[float] = None
    latency_median: Optional[float] = None
    latency_max: Optional[float] = None
    oracle_effort: Optional[float] = None
    oracle_converged: Optional[bool] = None


class VerificationReport(BaseModel):
    checked: int
    passed: int
    max_control_error: float = 0.0
    max_state_error: float = 0.0
    max_costate_error: float = 0.0
    max_iterations: int = 0
    failures: List[int] = Field(default_factory=list, description="Record indices that failed.")

    @property
    def pass_rate(self) -> float:
        return self.passed / self.checked if self.checked else 1.0


class ConvergenceStudy(BaseModel):
    runs: int
    cold_converged: int
    warm_converged: int
    cold_iterations_mean: Optional[float] = Field(None, description="Mean Newton iterations of the converged cold starts.")
    warm_iterations_mean: Optional[float] = None

    @property
    def cold_rate(self) -> float:
        return self.cold_converged / self.runs if self.runs else 0.0

    @property
    def warm_rate(self) -> float:
        return self.warm_converged / self.runs if self.runs else 0.0
