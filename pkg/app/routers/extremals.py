"""
Extremals router - builds single extremals and their conjugate-time scans.
"""
from fastapi import APIRouter

from app.models.config import IntegratorConfig
from app.models.extremal import ExtremalRequest, ExtremalResponse, ExtremalSampleView
from app.routers.problems import ensure_registered
from app.services.extremals import TerminalSample, build_extremal
from app.services.problems import build_problem

router = APIRouter(prefix="/extremals", tags=["extremals"])


@router.post("/{problem_id}", response_model=ExtremalResponse)
def create_extremal(problem_id: str, request: ExtremalRequest):
    """
    Propagate one extremal backward from a terminal sample.

    Numerical failures (singular control, propagation errors) are answered
    with 409 by the application's error handler.
    """
    ensure_registered(problem_id)
    prob = build_problem(problem_id, request.params)
    sample = TerminalSample.from_parameters(prob, request.free, request.nu)
    traj = build_extremal(prob, sample, IntegratorConfig(), grid_spacing=request.dt)
    return ExtremalResponse(
        problem_id=problem_id,
        x_f=sample.x_f.tolist(),
        p_f=sample.p_f.tolist(),
        horizon=traj.horizon,
        conjugate_time=traj.conjugate_time,
        samples=[
            ExtremalSampleView(t_g=float(s), x=x.tolist(), p=p.tolist(), u=u.tolist(), cost_to_go=float(c))
            for s, x, p, u, c in zip(traj.sigmas, traj.states, traj.costates, traj.controls, traj.cost_to_go)
        ],
        det_trace=[[s, d] for s, d in traj.det_trace],
    )
