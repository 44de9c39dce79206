"""
Dataset cross-checks against the shooting oracle.
"""
from typing import List, Optional
import logging

import numpy as np

from app.models.config import IntegratorConfig, VerifySection
from app.models.simulation import ConvergenceStudy, VerificationReport
from app.services.dataset import Dataset
from app.services.oracle import shoot
from app.services.problem_core import ProblemDefinition

logger = logging.getLogger(__name__)


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def verify_dataset(
    ds: Dataset,
    prob: ProblemDefinition,
    settings: VerifySection,
    cfg: Optional[IntegratorConfig] = None,
) -> VerificationReport:
    """
    Re-solve a seeded subsample of records by shooting warm-started at the
    stored costate.

    A record passes when shooting converges, the recovered control matches
    the stored one and the shot trajectory reproduces the later records of
    the same extremal (states, costates and controls, relative to
    ``max(1, |value|)``).
    """
    cfg = cfg or IntegratorConfig()
    if len(ds) == 0:
        return VerificationReport(checked=0, passed=0)
    rng = np.random.default_rng(settings.seed)
    count = max(1, int(round(settings.fraction * len(ds))))
    picks = np.sort(rng.choice(len(ds), size=min(count, len(ds)), replace=False))
    dt = ds.meta.dt
    grid_index = np.rint(ds.t_g / dt).astype(int)

    report = VerificationReport(checked=len(picks), passed=0)
    for k in picks:
        k = int(k)
        result = shoot(prob, ds.x[k], float(ds.t_g[k]), ds.p[k], cfg=cfg,
                       tolerance=settings.tolerance, trajectory_spacing=dt)
        report.max_iterations = max(report.max_iterations, result.iterations)
        if not result.converged:
            logger.warning(f"Record {k}: shooting did not converge ({result.message})")
            report.failures.append(k)
            continue

        traj = result.trajectory
        control_error = _relative(traj.controls[0], ds.u[k])
        costate_error = _relative(traj.costates[0], ds.p[k])
        state_error = 0.0
        same = np.flatnonzero((ds.extremal_id == ds.extremal_id[k]) & (grid_index < grid_index[k]))
        for j in same:
            step = grid_index[k] - grid_index[j]
            if step < len(traj.times):
                state_error = max(state_error, _relative(traj.states[step], ds.x[j]))
                control_error = max(control_error, _relative(traj.controls[step], ds.u[j]))
                costate_error = max(costate_error, _relative(traj.costates[step], ds.p[j]))
        report.max_control_error = max(report.max_control_error, control_error)
        report.max_state_error = max(report.max_state_error, state_error)
        report.max_costate_error = max(report.max_costate_error, costate_error)
        if max(control_error, state_error, costate_error) <= settings.rel_tol:
            report.passed += 1
        else:
            logger.warning(f"Record {k}: control error {control_error:.3e}, state error {state_error:.3e}, "
                           f"costate error {costate_error:.3e}")
            report.failures.append(k)

    logger.info(f"Verified {report.passed}/{report.checked} records (max iterations {report.max_iterations})")
    return report


def start_records(ds: Dataset) -> np.ndarray:
    """Index of the largest-``t_g`` record of every extremal, in extremal order."""
    order = np.lexsort((-ds.t_g, ds.extremal_id))
    ids = ds.extremal_id[order]
    return order[np.r_[True, ids[1:] != ids[:-1]]]


def convergence_study(
    ds: Dataset,
    prob: ProblemDefinition,
    runs: int,
    seed: int = 0,
    tolerance: float = 1e-9,
    cfg: Optional[IntegratorConfig] = None,
) -> ConvergenceStudy:
    """
    Shoot from the start records of randomly chosen extremals twice: cold from
    a zero costate and warm from the stored costate.
    """
    cfg = cfg or IntegratorConfig()
    if len(ds) == 0 or runs == 0:
        return ConvergenceStudy(runs=0, cold_converged=0, warm_converged=0)
    starts = start_records(ds)
    rng = np.random.default_rng(seed)
    picks = rng.choice(starts, size=min(runs, len(starts)), replace=False)
    cold: List[int] = []
    warm: List[int] = []
    for k in picks:
        x, t_g = ds.x[k], float(ds.t_g[k])
        result = shoot(prob, x, t_g, None, cfg=cfg, tolerance=tolerance, with_trajectory=False)
        if result.converged:
            cold.append(result.iterations)
        result = shoot(prob, x, t_g, ds.p[k], cfg=cfg, tolerance=tolerance, with_trajectory=False)
        if result.converged:
            warm.append(result.iterations)
    study = ConvergenceStudy(
        runs=len(picks),
        cold_converged=len(cold),
        warm_converged=len(warm),
        cold_iterations_mean=float(np.mean(cold)) if cold else None,
        warm_iterations_mean=float(np.mean(warm)) if warm else None,
    )
    logger.info(f"Cold-start convergence {study.cold_rate:.1%}, warm-start {study.warm_rate:.1%} over {study.runs} runs")
    return study
