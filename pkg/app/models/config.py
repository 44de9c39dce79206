"""
Pydantic models for run configuration files.

One YAML file describes a run: the problem, how terminal samples are drawn,
how extremals are integrated, how the network is trained and which closed-loop
scenarios and Monte Carlo tests exist.
"""
from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional, Tuple
import math


class ProblemSection(BaseModel):
    """Which problem to build and its parameter overrides."""
    id: Literal["glider", "proximity", "double_integrator"] = Field(..., description="Registered problem id.")
    params: Dict[str, float] = Field(default_factory=dict, description="Parameter overrides (mass, gravity, ref_area, cd0, km, rho, t_f).")

    class Config:
        extra = "forbid"


class IntegratorConfig(BaseModel):
    """Runge-Kutta settings for one propagation."""
    method: Literal["rk4_fixed", "rk45_adaptive"] = Field("rk45_adaptive", description="Integration scheme.")
    step: Optional[float] = Field(None, gt=0, description="Fixed step (rk4_fixed) or maximum step (rk45_adaptive).")
    rel_tol: float = Field(1e-10, gt=0, description="Relative tolerance for the adaptive scheme.")
    abs_tol: float = Field(1e-12, gt=0, description="Absolute tolerance for the adaptive scheme.")
    max_steps: int = Field(1_000_000, ge=1, description="Upper bound on accepted steps.")
    output_grid_spacing: Optional[float] = Field(None, gt=0, description="Spacing of the uniform output grid.")

    @model_validator(mode="after")
    def _fixed_needs_step(self):
        if self.method == "rk4_fixed" and self.step is None:
            raise ValueError("rk4_fixed requires 'step'")
        return self

    class Config:
        extra = "forbid"


class SamplingSpec(BaseModel):
    """How terminal samples on the terminal manifold are drawn."""
    n_samples: int = Field(..., ge=1, description="Number of terminal samples N.")
    dt: float = Field(..., gt=0, description="Dataset grid spacing in time-to-go.")
    free_state_ranges: List[Tuple[float, float]] = Field(default_factory=list, description="Ranges of the free terminal coordinates, in chart order.")
    multiplier_ranges: List[Tuple[float, float]] = Field(default_factory=list, description="Ranges of the terminal Lagrange multipliers.")
    mode: Literal["uniform_grid", "uniform_random"] = Field("uniform_random", description="Sampling scheme.")
    seed: int = Field(0, description="Seed for uniform_random.")

    @field_validator("free_state_ranges", "multiplier_ranges")
    @classmethod
    def _finite_ordered(cls, ranges):
        for lo, hi in ranges:
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"range [{lo}, {hi}] is not finite")
            if lo > hi:
                raise ValueError(f"range [{lo}, {hi}] has lower bound above upper bound")
        return ranges

    class Config:
        extra = "forbid"


class TrainConfig(BaseModel):
    """Training protocol for the feedback network."""
    hidden_layers: List[int] = Field(default_factory=lambda: [20, 20, 20], description="Hidden layer widths.")
    activation: Literal["tanh"] = Field("tanh", description="Hidden activation.")
    optimizer: Literal["adam", "sgd"] = Field("adam", description="Adaptive-moment or plain gradient descent.")
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(256, ge=1)
    max_epochs: int = Field(2000, ge=0)
    target_mse: float = Field(1e-6, gt=0, description="Stop once the normalized train MSE is below this value.")
    validation_split: float = Field(0.1, ge=0, lt=1)
    patience: int = Field(100, ge=1, description="Epochs without validation improvement before a warning.")
    seed: int = Field(0)
    log_every: int = Field(50, ge=1)

    @field_validator("hidden_layers")
    @classmethod
    def _positive_widths(cls, widths):
        if any(w < 1 for w in widths):
            raise ValueError("hidden layer widths must be positive")
        return widths

    class Config:
        extra = "forbid"


class ScenarioPreset(BaseModel):
    """A named initial condition."""
    initial_state: List[float]
    t_go: float = Field(..., gt=0, description="Initial time-to-go.")
    perturbations: Dict[str, float] = Field(default_factory=dict, description="Plant parameter overrides.")
    description: Optional[str] = None

    class Config:
        extra = "forbid"


ControllerId = Literal["mlp", "shooting", "analytic", "zero"]


class SimConfig(BaseModel):
    """One closed-loop run."""
    guidance_step: float = Field(..., gt=0, description="Guidance update period.")
    plant_step: float = Field(..., gt=0, description="Plant integration step.")
    initial_state: List[float]
    t_go: float = Field(..., gt=0)
    perturbations: Dict[str, float] = Field(default_factory=dict)
    controller: ControllerId = "mlp"

    @model_validator(mode="after")
    def _step_multiple(self):
        ratio = self.guidance_step / self.plant_step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("guidance_step must be a positive multiple of plant_step")
        return self

    class Config:
        extra = "forbid"


class SimulationSection(BaseModel):
    """Simulator defaults and named scenarios."""
    guidance_step: float = Field(..., gt=0)
    plant_step: float = Field(..., gt=0)
    controller: ControllerId = "mlp"
    scenarios: Dict[str, ScenarioPreset] = Field(default_factory=dict)

    def sim_config(self, scenario: str, controller: Optional[str] = None) -> SimConfig:
        """Combine the defaults with one named scenario."""
        preset = self.scenarios[scenario]
        return SimConfig(
            guidance_step=self.guidance_step,
            plant_step=self.plant_step,
            initial_state=preset.initial_state,
            t_go=preset.t_go,
            perturbations=preset.perturbations,
            controller=controller or self.controller,
        )

    class Config:
        extra = "forbid"


class DispersionSpec(BaseModel):
    """Uniform dispersions around a base scenario."""
    base_scenario: str
    n_runs: int = Field(100, ge=0)
    state_ranges: List[Optional[Tuple[float, float]]] = Field(default_factory=list, description="Per-coordinate ranges; null keeps the base value.")
    parameter_ranges: Dict[str, Tuple[float, float]] = Field(default_factory=dict, description="Plant parameter ranges.")
    seed: int = 0

    class Config:
        extra = "forbid"


class MonteCarloSection(BaseModel):
    tests: Dict[str, DispersionSpec] = Field(default_factory=dict)
    histogram_bins: int = Field(20, ge=1)

    class Config:
        extra = "forbid"


class VerifySection(BaseModel):
    """Oracle cross-check settings."""
    fraction: float = Field(0.01, gt=0, le=1, description="Share of records re-solved by shooting.")
    rel_tol: float = Field(1e-6, gt=0, description="Relative agreement required on the control.")
    tolerance: float = Field(1e-9, gt=0, description="Shooting defect tolerance.")
    cold_start_runs: int = Field(50, ge=0)
    seed: int = 0

    class Config:
        extra = "forbid"


class RunConfig(BaseModel):
    """Top-level run configuration."""
    problem: ProblemSection
    sampling: Optional[SamplingSpec] = None
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    simulation: Optional[SimulationSection] = None
    monte_carlo: MonteCarloSection = Field(default_factory=MonteCarloSection)
    verify: VerifySection = Field(default_factory=VerifySection)

    class Config:
        extra = "forbid"
