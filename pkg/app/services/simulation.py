"""
Closed-loop guidance simulation.

At every guidance update the controller is queried with ``(t_g, x)``, the
returned control is held constant while the plant is integrated with
fixed-step RK4, and ``t_g`` is decremented on schedule. The plant may use
perturbed parameters; controllers always see the nominal problem.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math
import time

import numpy as np
from scipy.integrate import simpson

from app.exceptions import ConfigError, MecpError
from app.models.config import DispersionSpec, IntegratorConfig, SimConfig
from app.models.simulation import MonteCarloSummary, RunSummary
from app.services import mlp as mlp_service
from app.services.oracle import double_integrator_law, shoot
from app.services.problem_core import PhasePoint, ProblemDefinition, optimal_control
from app.services.problems import build_problem
from app.services.propagator import rk4_step
from app.services.workers import run_ordered

logger = logging.getLogger(__name__)


# --- Controllers ---

class Controller:
    """Feedback law ``(t_g, x) -> u``."""

    name = "controller"

    def __call__(self, t_g: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> None:
        """Forget any state carried between queries."""


class MlpController(Controller):
    name = "mlp"

    def __init__(self, model: mlp_service.MlpModel):
        self.model = model

    def __call__(self, t_g: float, x: np.ndarray) -> np.ndarray:
        return mlp_service.infer(self.model, t_g, x)


class AnalyticController(Controller):
    name = "analytic"

    def __call__(self, t_g: float, x: np.ndarray) -> np.ndarray:
        return double_integrator_law(x, t_g)


class ZeroController(Controller):
    name = "zero"

    def __init__(self, control_dim: int):
        self.control_dim = control_dim

    def __call__(self, t_g: float, x: np.ndarray) -> np.ndarray:
        return np.zeros(self.control_dim)


class ShootingController(Controller):
    """Re-solves the boundary-value problem at every query, warm-started from the previous costate."""

    name = "shooting"

    def __init__(self, prob: ProblemDefinition, initial_guess: Optional[np.ndarray] = None, tolerance: float = 1e-9):
        self.prob = prob
        self.initial_guess = None if initial_guess is None else np.asarray(initial_guess, dtype=float)
        self.tolerance = tolerance
        self.failures = 0
        self.reset()

    def reset(self) -> None:
        self.guess = None if self.initial_guess is None else self.initial_guess.copy()
        self.last_u = np.zeros(self.prob.control_dim)

    def __call__(self, t_g: float, x: np.ndarray) -> np.ndarray:
        result = shoot(self.prob, x, t_g, self.guess, tolerance=self.tolerance, with_trajectory=False)
        if not result.converged:
            self.failures += 1
            logger.warning(f"Shooting failed at t_g={t_g:.6g} ({result.message}); holding the previous control")
            return self.last_u
        self.guess = result.p0
        self.last_u = optimal_control(self.prob, PhasePoint(x=np.asarray(x, dtype=float), p=result.p0))
        return self.last_u


def make_controller(
    controller_id: str,
    prob: ProblemDefinition,
    model: Optional[mlp_service.MlpModel] = None,
    initial_guess: Optional[np.ndarray] = None,
) -> Controller:
    """
    Raises:
        ConfigError: for an unknown id, a missing model or a law that does not fit the problem.
    """
    if controller_id == "mlp":
        if model is None:
            raise ConfigError("controller 'mlp' needs a trained model (--model)")
        if model.n_inputs != 1 + prob.state_dim or model.n_outputs != prob.control_dim:
            raise ConfigError(f"model sizes {model.sizes} do not fit {prob.problem_id}")
        return MlpController(model)
    if controller_id == "analytic":
        if prob.problem_id != "double_integrator":
            raise ConfigError(f"the analytic law exists only for double_integrator, not {prob.problem_id}")
        return AnalyticController()
    if controller_id == "zero":
        return ZeroController(prob.control_dim)
    if controller_id == "shooting":
        return ShootingController(prob, initial_guess)
    raise ConfigError(f"unknown controller '{controller_id}'")


# --- Reference cost ---

def oracle_effort(prob: ProblemDefinition, x0: np.ndarray, t_go: float, cfg: Optional[IntegratorConfig] = None) -> Tuple[bool, Optional[float]]:
    """Open-loop optimal effort from ``x0`` by cold-start shooting; ``(False, None)`` when shooting fails."""
    result = shoot(prob, x0, t_go, None, cfg=cfg, tolerance=1e-8, trajectory_spacing=t_go / 2000.0)
    if not result.converged:
        logger.warning(f"Oracle shooting did not converge from {x0} ({result.message})")
        return False, None
    traj = result.trajectory
    rate = prob.cost_weight * np.sum(traj.controls ** 2, axis=1)
    return True, float(simpson(rate, x=traj.times))


# --- Single run ---

@dataclass
class SimResult:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    terminal_state: np.ndarray
    terminal_components: np.ndarray
    terminal_error: float
    effort: float
    aborted: bool = False
    abort_reason: Optional[str] = None
    arrival_time: Optional[float] = None
    latencies: List[float] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def latency_median(self) -> Optional[float]:
        return float(np.median(self.latencies)) if self.latencies else None

    @property
    def latency_max(self) -> Optional[float]:
        return float(np.max(self.latencies)) if self.latencies else None

    def trajectory(self, run_id: int) -> "RunTrajectory":
        return RunTrajectory(run_id=run_id, times=self.times, states=self.states, controls=self.controls)

    def arrival_offset(self, t_go: float) -> Optional[float]:
        return None if self.arrival_time is None else self.arrival_time - t_go

    def summary(self, run_id: int, t_go: float, drawn: Optional[Dict[str, float]] = None) -> RunSummary:
        return RunSummary(
            run_id=run_id,
            terminal_error=self.terminal_error,
            terminal_components=[float(c) for c in self.terminal_components],
            effort=self.effort,
            aborted=self.aborted,
            abort_reason=self.abort_reason,
            arrival_offset=self.arrival_offset(t_go),
            drawn=drawn or {},
        )


def plant_problem(prob: ProblemDefinition, perturbations: Dict[str, float]) -> ProblemDefinition:
    """The nominal problem with parameter overrides applied."""
    if not perturbations:
        return prob
    return build_problem(prob.problem_id, {**prob.params, **perturbations})


def run(prob: ProblemDefinition, cfg: SimConfig, controller: Controller) -> SimResult:
    """
    Fly one closed-loop run from ``cfg.initial_state`` with ``cfg.t_go`` to go.

    A plant that leaves its state domain aborts the run; the result is
    flagged rather than raised.

    Raises:
        DomainViolationError: if the initial state is outside the domain.
    """
    plant = plant_problem(prob, cfg.perturbations)
    x = np.asarray(cfg.initial_state, dtype=float)
    prob.validate_state(x)
    n_updates = max(1, int(round(cfg.t_go / cfg.guidance_step)))
    substeps = max(1, int(round(cfg.guidance_step / cfg.plant_step)))
    w = plant.cost_weight
    controller.reset()

    times: List[float] = []
    states: List[np.ndarray] = []
    controls: List[np.ndarray] = []
    latencies: List[float] = []
    effort = 0.0
    aborted, reason = False, None
    closest = (float(np.linalg.norm(plant.terminal_constraint(x))), 0.0)
    t = 0.0

    for k in range(n_updates):
        t_g = cfg.t_go - k * cfg.guidance_step
        hold = cfg.guidance_step if k < n_updates - 1 else cfg.t_go - k * cfg.guidance_step
        started = time.perf_counter()
        try:
            u = np.asarray(controller(t_g, x), dtype=float)
        except MecpError as e:
            aborted, reason = True, f"controller failed at t={t:.6g}: {e.message}"
            break
        latencies.append(time.perf_counter() - started)
        times.append(t)
        states.append(x.copy())
        controls.append(u.copy())

        def rhs(_t: float, y: np.ndarray) -> np.ndarray:
            return np.concatenate([plant.dynamics(y[:-1], u), [w * float(np.dot(u, u))]])

        h = hold / substeps
        y = np.concatenate([x, [effort]])
        try:
            for j in range(substeps):
                y = rk4_step(rhs, t + j * h, y, h)
                plant.validate_state(y[:-1])
                norm = float(np.linalg.norm(plant.terminal_constraint(y[:-1])))
                if norm < closest[0]:
                    closest = (norm, t + (j + 1) * h)
        except MecpError as e:
            aborted, reason = True, f"plant left its domain near t={t:.6g}: {e.message}"
            x, effort = y[:-1], float(y[-1])
            break
        x, effort = y[:-1], float(y[-1])
        t += hold

    components = np.asarray(plant.terminal_constraint(x), dtype=float) if np.all(np.isfinite(x)) else np.full(plant.constraint_dim, np.nan)
    if aborted:
        logger.warning(f"Run aborted: {reason}")
    return SimResult(
        times=np.asarray(times),
        states=np.vstack(states) if states else np.zeros((0, prob.state_dim)),
        controls=np.vstack(controls) if controls else np.zeros((0, prob.control_dim)),
        terminal_state=x,
        terminal_components=components,
        terminal_error=float(np.linalg.norm(components)),
        effort=effort,
        aborted=aborted,
        abort_reason=reason,
        arrival_time=closest[1],
        latencies=latencies,
    )


# --- Monte Carlo ---

@dataclass
class RunTrajectory:
    """Guidance-update samples of one Monte Carlo run."""

    run_id: int
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray


@dataclass
class MonteCarloResult:
    summary: MonteCarloSummary
    runs: List[RunSummary]
    histograms: Dict[str, List[Tuple[float, float, int]]]
    trajectories: List[RunTrajectory] = field(default_factory=list)


def draw_dispersions(base: SimConfig, spec: DispersionSpec, state_dim: int) -> List[Tuple[SimConfig, Dict[str, float]]]:
    """
    Seeded i.i.d. uniform draws; per run the state coordinates come first,
    then the parameters in name order.
    """
    if len(spec.state_ranges) not in (0, state_dim):
        raise ConfigError(f"monte_carlo.state_ranges: expected {state_dim} entries, got {len(spec.state_ranges)}")
    rng = np.random.default_rng(spec.seed)
    draws = []
    for _ in range(spec.n_runs):
        state = list(base.initial_state)
        drawn: Dict[str, float] = {}
        for i, bounds in enumerate(spec.state_ranges):
            if bounds is not None:
                state[i] = float(rng.uniform(bounds[0], bounds[1]))
                drawn[f"x{i + 1}"] = state[i]
        perturbations = dict(base.perturbations)
        for name in sorted(spec.parameter_ranges):
            lo, hi = spec.parameter_ranges[name]
            perturbations[name] = float(rng.uniform(lo, hi))
            drawn[name] = perturbations[name]
        draws.append((base.model_copy(update={"initial_state": state, "perturbations": perturbations}), drawn))
    return draws


def check_coverage(spec: DispersionSpec, lower: np.ndarray, upper: np.ndarray, names: Sequence[str]) -> List[str]:
    """Warn about dispersion ranges that leave the state box covered by the training data."""
    issues = []
    for i, bounds in enumerate(spec.state_ranges):
        if bounds is None:
            continue
        if bounds[0] < lower[i] or bounds[1] > upper[i]:
            issues.append(f"{names[i]} range [{bounds[0]:g}, {bounds[1]:g}] exceeds dataset coverage [{lower[i]:g}, {upper[i]:g}]")
    for issue in issues:
        logger.warning(issue)
    return issues


def histogram(values: Sequence[float], bins: int) -> List[Tuple[float, float, int]]:
    """``(bin_left, bin_right, count)`` rows; empty input gives no rows."""
    values = np.asarray([v for v in values if v is not None and np.isfinite(v)], dtype=float)
    if values.size == 0:
        return []
    counts, edges = np.histogram(values, bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]


@dataclass
class _McJob:
    problem_id: str
    params: dict
    cfg: SimConfig
    controller_id: str
    model_payload: Optional[dict]
    run_id: int
    drawn: Dict[str, float]


McOutcome = Tuple[RunSummary, List[float], RunTrajectory]


def _mc_job(job: _McJob) -> McOutcome:
    prob = build_problem(job.problem_id, job.params)
    model = mlp_service.model_from_dict(job.model_payload) if job.model_payload else None
    controller = make_controller(job.controller_id, prob, model)
    result = run(prob, job.cfg, controller)
    return result.summary(job.run_id, job.cfg.t_go, job.drawn), result.latencies, result.trajectory(job.run_id)


def summarize(test: str, runs: List[RunSummary], latencies: Sequence[float], constraint_dim: int) -> MonteCarloSummary:
    flown = [r for r in runs if not r.aborted]
    summary = MonteCarloSummary(test=test, n_runs=len(runs), n_aborted=len(runs) - len(flown))
    if latencies:
        summary.latency_median = float(np.median(latencies))
        summary.latency_max = float(np.max(latencies))
    if not flown:
        return summary
    errors = np.array([r.terminal_error for r in flown])
    components = np.abs(np.array([r.terminal_components for r in flown])).reshape(-1, constraint_dim)
    efforts = np.array([r.effort for r in flown])
    offsets = [abs(r.arrival_offset) for r in flown if r.arrival_offset is not None]
    summary.terminal_error_max = float(errors.max())
    summary.terminal_error_mean = float(errors.mean())
    summary.component_max = components.max(axis=0).tolist()
    summary.component_mean = components.mean(axis=0).tolist()
    summary.effort_mean = float(efforts.mean())
    summary.effort_max = float(efforts.max())
    summary.arrival_offset_max = float(max(offsets)) if offsets else None
    return summary


def monte_carlo(
    prob: ProblemDefinition,
    base: SimConfig,
    spec: DispersionSpec,
    controller_id: str,
    model: Optional[mlp_service.MlpModel] = None,
    test: str = "test",
    bins: int = 20,
    workers: int = 1,
) -> MonteCarloResult:
    """
    Fly ``spec.n_runs`` dispersed runs and aggregate terminal errors, effort
    and arrival-time offsets. Aborted runs are counted, not fatal; their
    trajectories stop at the abort.
    """
    draws = draw_dispersions(base, spec, prob.state_dim)
    logger.info(f"Monte Carlo '{test}': {len(draws)} runs with the {controller_id} controller")
    if workers > 1:
        payload = mlp_service.model_to_dict(model) if model is not None else None
        jobs = [_McJob(prob.problem_id, dict(prob.params), cfg, controller_id, payload, i, drawn)
                for i, (cfg, drawn) in enumerate(draws)]
        outcomes = run_ordered(_mc_job, jobs, workers, chunksize=1)
    else:
        controller = make_controller(controller_id, prob, model)
        outcomes = []
        for i, (cfg, drawn) in enumerate(draws):
            result = run(prob, cfg, controller)
            outcomes.append((result.summary(i, cfg.t_go, drawn), result.latencies, result.trajectory(i)))

    runs = [summary for summary, _, _ in outcomes]
    latencies = [lat for _, lats, _ in outcomes for lat in lats]
    summary = summarize(test, runs, latencies, prob.constraint_dim)
    flown = [r for r in runs if not r.aborted]
    histograms = {
        "terminal_error": histogram([r.terminal_error for r in flown], bins),
        "effort": histogram([r.effort for r in flown], bins),
        "arrival_offset": histogram([r.arrival_offset for r in flown], bins),
    }
    for j, name in enumerate(_constraint_names(prob)):
        histograms[f"error_{name}"] = histogram([r.terminal_components[j] for r in flown], bins)
    if summary.n_runs:
        logger.info(
            f"Monte Carlo '{test}': {summary.n_aborted} aborted, max terminal error "
            f"{summary.terminal_error_max if summary.terminal_error_max is not None else math.nan:.4g}"
        )
    return MonteCarloResult(summary=summary, runs=runs, histograms=histograms,
                            trajectories=[traj for _, _, traj in outcomes])


def _constraint_names(prob: ProblemDefinition) -> List[str]:
    grad = prob.terminal_gradient(np.zeros(prob.state_dim))
    names = []
    for row in np.atleast_2d(grad):
        nz = np.flatnonzero(row)
        names.append(prob.state_names[nz[0]] if len(nz) == 1 else f"phi{len(names) + 1}")
    return names
