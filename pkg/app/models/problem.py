"""
Pydantic models for problem parameters and their HTTP views.
"""
from pydantic import BaseModel, Field
from typing import Dict, List, Optional


class GlidingVehicleParams(BaseModel):
    """Planar gliding vehicle parameters (SI units)."""
    mass: float = Field(100.0, gt=0, description="Vehicle mass in kg.")
    gravity: float = Field(9.8, gt=0, description="Gravitational acceleration in m/s^2.")
    ref_area: float = Field(0.0324, gt=0, description="Aerodynamic reference area in m^2.")
    cd0: float = Field(0.2, gt=0, description="Zero-lift drag coefficient.")
    km: float = Field(0.1, gt=0, description="Induced drag factor.")
    rho: float = Field(1.225, gt=0, description="Air density in kg/m^3 (sea-level standard by default).")

    @property
    def k1(self) -> float:
        """Parasitic drag coefficient: D = k1 V^2 + k2 a^2 / V^2."""
        return 0.5 * self.rho * self.ref_area * self.cd0

    @property
    def k2(self) -> float:
        """Induced drag coefficient."""
        return 2.0 * self.km * self.mass ** 2 / (self.rho * self.ref_area)

    class Config:
        extra = "forbid"


class ProximityParams(BaseModel):
    """Normalized relative-motion problem: unit gravitational parameter and unit target orbit radius."""
    normalized: bool = Field(True, description="Distances scaled by the target orbit radius, time by its mean motion.")

    class Config:
        extra = "forbid"


class DoubleIntegratorParams(BaseModel):
    """Double integrator benchmark; it has no tunable parameters."""

    class Config:
        extra = "forbid"


class ProblemSummary(BaseModel):
    """Dimensions and weights of a registered problem."""
    problem_id: str = Field(..., description="Registry identifier of the problem.")
    state_dim: int = Field(..., description="State dimension n.")
    control_dim: int = Field(..., description="Control dimension m.")
    constraint_dim: int = Field(..., description="Number of terminal constraints s.")
    cost_weight: float = Field(..., description="Running-cost weight w.")
    t_f: float = Field(..., description="Default final time.")
    state_names: List[str] = Field(..., description="State coordinate names in state order.")
    control_names: List[str] = Field(..., description="Control component names.")


class ScenarioView(BaseModel):
    """A named initial condition shipped with a problem."""
    name: str
    initial_state: List[float]
    t_go: float
    perturbations: Dict[str, float] = Field(default_factory=dict)
    description: Optional[str] = None
