"""
Problems router - handles /problems/* endpoints.
"""
from fastapi import APIRouter, Depends, HTTPException, status
from typing import List

from app.config import Settings, load_run_config
from app.dependencies import get_settings
from app.models.problem import ProblemSummary, ScenarioView
from app.services.problems import build_problem, registered_problems

router = APIRouter(prefix="/problems", tags=["problems"])


# --- Helper Functions ---

def ensure_registered(problem_id: str) -> None:
    """Raise 404 for an unknown problem id."""
    if problem_id not in registered_problems():
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Problem '{problem_id}' not found.",
        )


# --- Endpoints ---

@router.get("", response_model=List[ProblemSummary])
def list_problems():
    """List the registered problems with their dimensions and default final time."""
    summaries = []
    for problem_id in registered_problems():
        prob = build_problem(problem_id)
        summaries.append(ProblemSummary(
            problem_id=problem_id,
            state_dim=prob.state_dim,
            control_dim=prob.control_dim,
            constraint_dim=prob.constraint_dim,
            cost_weight=prob.cost_weight,
            t_f=prob.t_f,
            state_names=list(prob.state_names),
            control_names=list(prob.control_names),
        ))
    return summaries


@router.get("/{problem_id}/scenarios", response_model=List[ScenarioView])
def list_scenarios(problem_id: str, app_settings: Settings = Depends(get_settings)):
    """Named initial conditions shipped in the problem's run config."""
    ensure_registered(problem_id)
    cfg = load_run_config(app_settings.get_config_dir() / f"{problem_id}.yaml")
    if cfg.simulation is None:
        return []
    return [
        ScenarioView(name=name, **preset.model_dump())
        for name, preset in cfg.simulation.scenarios.items()
    ]
