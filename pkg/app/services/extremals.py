"""
Parameterized family of Hamiltonian extremals.

Extremals are propagated backward in time-to-go ``sigma`` from a terminal
sample ``(x_f, p_f = nu . grad phi(x_f))`` together with the variational
matrices ``dX/dq`` and ``dP/dq``. The family is truncated at the first
conjugate (focal) time, where ``dX/dq`` loses rank.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from app.exceptions import (
    AssumptionViolationError,
    ContractViolationError,
    DegenerateFamilyError,
    SamplingError,
    SingularControlError,
)
from app.models.config import IntegratorConfig
from app.services.problem_core import (
    PhasePoint,
    ProblemDefinition,
    optimal_control,
    maximized_hamiltonian,
    reduced_gradient,
    reduced_second_derivatives,
    satisfies_legendre,
)
from app.services.propagator import GRID_TOL, AugmentedState, StepEvent, propagate

logger = logging.getLogger(__name__)

# Exclusion window around the structural zero of det(dX) at sigma = 0, as a share of t_f
EXCLUSION_FRACTION = 1e-3
# |det| below this share of its running maximum counts as a rank loss
DELTA_RANK = 1e-9
# Bisection resolution on the conjugate time
BISECTION_TOL = 1e-8
# A trace whose largest |det| past the window stays below this is degenerate
DEGENERATE_FLOOR = 1e-14
# Terminal samples must satisfy phi(x_f) = 0 to this accuracy
TERMINAL_TOL = 1e-12


@dataclass(frozen=True)
class TerminalSample:
    """A point of the terminal Lagrangian manifold; ``p_f`` is always derived from ``nu``."""

    x_f: np.ndarray
    nu: np.ndarray
    p_f: np.ndarray

    @classmethod
    def from_state(cls, prob: ProblemDefinition, x_f: np.ndarray, nu: np.ndarray) -> "TerminalSample":
        """
        Build a sample from a terminal state and multipliers.

        Raises:
            SamplingError: if ``x_f`` is off the terminal manifold or outside the state domain.
        """
        x_f = np.asarray(x_f, dtype=float)
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        if nu.shape != (prob.constraint_dim,):
            raise ContractViolationError(f"expected {prob.constraint_dim} multipliers, got {nu.shape}")
        defect = np.max(np.abs(prob.terminal_constraint(x_f)))
        if defect >= TERMINAL_TOL:
            raise SamplingError(f"terminal state off the manifold (|phi|={defect:.3g})")
        try:
            prob.validate_state(x_f)
        except Exception as e:
            raise SamplingError(str(e)) from e
        p_f = nu @ prob.terminal_gradient(x_f)
        return cls(x_f=x_f, nu=nu, p_f=p_f)

    @classmethod
    def from_parameters(cls, prob: ProblemDefinition, free: np.ndarray, nu: np.ndarray) -> "TerminalSample":
        """Build a sample from free terminal coordinates (through the problem's chart) and multipliers."""
        free = np.atleast_1d(np.asarray(free, dtype=float))
        if free.shape != (prob.free_dim,):
            raise ContractViolationError(f"expected {prob.free_dim} free coordinates, got {free.shape}")
        return cls.from_state(prob, prob.terminal_chart(free), nu)


@dataclass
class ExtremalTrajectory:
    """
    One truncated extremal sampled on the time-to-go grid ``(0, T]``.
    Row ``k`` of every array belongs to ``sigmas[k]``.
    """

    terminal: TerminalSample
    horizon: float
    sigmas: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    controls: np.ndarray
    cost_to_go: np.ndarray
    conjugate_time: Optional[float] = None
    det_trace: List[Tuple[float, float]] = field(default_factory=list)
    scaled_det_trace: List[Tuple[float, float]] = field(default_factory=list)
    n_steps: int = 0

    @property
    def truncated(self) -> bool:
        """True when the horizon was cut at a conjugate time."""
        return self.conjugate_time is not None

    def __len__(self) -> int:
        return len(self.sigmas)


# --- Vector fields ---

def backward_rhs(prob: ProblemDefinition, pt: PhasePoint) -> np.ndarray:
    """
    Time-reversed canonical flow in time-to-go: ``x' = -dh/dp``, ``p' = +dh/dx``.

    Raises:
        SingularControlError: where ``u*`` is undefined.
        DomainViolationError: outside the state domain.
    """
    h_x, h_p = reduced_gradient(prob, pt)
    return np.concatenate([-h_p, h_x])


def forward_rhs(prob: ProblemDefinition, pt: PhasePoint) -> np.ndarray:
    """Canonical equations in forward time: ``x' = dh/dp``, ``p' = -dh/dx``."""
    return -backward_rhs(prob, pt)


def variational_rhs(prob: ProblemDefinition, aug: AugmentedState) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backward variational equations along the reference extremal:
    ``dX' = -H_px dX - H_pp dP`` and ``dP' = H_xx dX + H_xp dP``.
    """
    if not aug.has_variations:
        raise ContractViolationError("variational_rhs needs dX and dP")
    h_xx, h_xp, h_pp = reduced_second_derivatives(prob, aug.pt)
    dX_dot = -h_xp.T @ aug.dX - h_pp @ aug.dP
    dP_dot = h_xx @ aug.dX + h_xp @ aug.dP
    return dX_dot, dP_dot


# --- Initial conditions of the variational system ---

def kernel_basis(grad: np.ndarray) -> np.ndarray:
    """
    Orthonormal basis of ``ker grad`` by Gram-Schmidt on the columns of the
    projector onto the complement of the row space.
    """
    s, n = grad.shape
    gram = grad @ grad.T
    projector = np.eye(n) - grad.T @ np.linalg.solve(gram, grad)
    basis: List[np.ndarray] = []
    for j in range(n):
        v = projector[:, j].copy()
        for _ in range(2):
            for b in basis:
                v -= np.dot(b, v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            basis.append(v / norm)
        if len(basis) == n - s:
            break
    if len(basis) != n - s:
        raise AssumptionViolationError(f"kernel of the constraint gradient has dimension {len(basis)}, expected {n - s}")
    return np.column_stack(basis) if basis else np.zeros((n, 0))


def initial_conditions_full(prob: ProblemDefinition, sample: TerminalSample) -> Tuple[np.ndarray, np.ndarray]:
    """``(dX0, dP0) = (O_n, I_n)`` for a point-target problem (``s = n``)."""
    if prob.constraint_dim != prob.state_dim:
        raise ContractViolationError(
            f"{prob.problem_id}: full initial conditions need s = n, got s={prob.constraint_dim}, n={prob.state_dim}"
        )
    n = prob.state_dim
    return np.zeros((n, n)), np.eye(n)


def reference_multipliers(grad: np.ndarray, p_f: np.ndarray) -> np.ndarray:
    """Least-squares multipliers ``nu = p_f grad^T (grad grad^T)^-1``."""
    gram = grad @ grad.T
    if np.linalg.matrix_rank(gram) < grad.shape[0]:
        raise AssumptionViolationError("constraint gradient is rank deficient at the terminal state")
    return np.linalg.solve(gram, grad @ p_f)


def initial_conditions_partial(prob: ProblemDefinition, sample: TerminalSample) -> Tuple[np.ndarray, np.ndarray]:
    """
    Initial sensitivities for a terminal manifold of positive dimension (``s < n``).

    The first ``n - s`` columns move along the manifold (an orthonormal kernel
    basis of the constraint gradient), the last ``s`` columns move the multipliers:
    ``dX0 = [B, O]`` and ``dP0 = [nu_bar . d2phi . B, grad^T]``.

    Raises:
        AssumptionViolationError: if ``grad phi(x_f)`` is rank deficient.
    """
    n, s = prob.state_dim, prob.constraint_dim
    if s >= n:
        raise ContractViolationError(f"{prob.problem_id}: partial initial conditions need s < n")
    grad = np.asarray(prob.terminal_gradient(sample.x_f), dtype=float)
    nu_bar = reference_multipliers(grad, sample.p_f)
    basis = kernel_basis(grad)
    curvature = np.asarray(prob.terminal_hessian_contraction(nu_bar, sample.x_f), dtype=float)
    dX0 = np.hstack([basis, np.zeros((n, s))])
    dP0 = np.hstack([curvature @ basis, grad.T])
    return dX0, dP0


def initial_conditions(prob: ProblemDefinition, sample: TerminalSample) -> Tuple[np.ndarray, np.ndarray]:
    if prob.constraint_dim == prob.state_dim:
        return initial_conditions_full(prob, sample)
    return initial_conditions_partial(prob, sample)


# --- Conjugate-time detection ---

def scaled_determinant(dX: np.ndarray) -> float:
    """Determinant of ``dX`` with every column divided by its sup-norm (zero columns give 0)."""
    scale = np.max(np.abs(dX), axis=0)
    if np.any(scale == 0.0):
        return 0.0
    return float(np.linalg.det(dX / scale))


class ConjugateMonitor:
    """
    Online detector of the first rank loss of ``dX/dq``: a sign change of the
    determinant, or ``|det|`` dropping below ``delta_rank`` times its running maximum.
    """

    def __init__(self, exclusion: float, delta_rank: float = DELTA_RANK, tol: float = BISECTION_TOL):
        self.exclusion = exclusion
        self.delta_rank = delta_rank
        self.tol = tol
        self.running_max = 0.0
        self.prev: Optional[Tuple[float, float]] = None

    def _locate(self, lo: float, hi: float, hi_value: float, det_fn: Optional[Callable[[float], float]]) -> float:
        sign = math.copysign(1.0, self.prev[1])
        threshold = self.delta_rank * self.running_max
        if det_fn is None:
            if hi_value * sign < 0:
                lo_value = self.prev[1]
                return lo + (hi - lo) * lo_value / (lo_value - hi_value)
            return hi
        while hi - lo > self.tol:
            mid = 0.5 * (lo + hi)
            if det_fn(mid) * sign > threshold:
                lo = mid
            else:
                hi = mid
        return hi

    def update(self, sigma: float, value: float, det_fn: Optional[Callable[[float], float]] = None) -> Optional[float]:
        """Feed one sample; returns the located conjugate time once a rank loss is seen."""
        if sigma <= self.exclusion:
            return None
        if self.prev is not None and self.prev[1] != 0.0:
            sign_change = value * self.prev[1] < 0
            collapsed = abs(value) < self.delta_rank * self.running_max
            if sign_change or collapsed:
                return self._locate(self.prev[0], sigma, value, det_fn)
        self.running_max = max(self.running_max, abs(value))
        self.prev = (sigma, value)
        return None

    def finish(self) -> None:
        """Raise if the determinant never left zero past the exclusion window."""
        if self.prev is not None and self.running_max <= DEGENERATE_FLOOR:
            raise DegenerateFamilyError(
                f"det(dX/dq) stays below {DEGENERATE_FLOOR:g} beyond sigma={self.exclusion:.3g}"
            )


def detect_conjugate_time(
    det_trace: Sequence[Tuple[float, float]],
    exclusion: float,
    delta_rank: float = DELTA_RANK,
    t_max: Optional[float] = None,
    det_fn: Optional[Callable[[float], float]] = None,
) -> Optional[float]:
    """
    First conjugate time in a determinant trace, or ``None``.

    Args:
        det_trace: ``(sigma, det)`` pairs in increasing ``sigma``.
        exclusion: samples with ``sigma <= exclusion`` are ignored.
        delta_rank: relative collapse threshold.
        t_max: conjugate times beyond this are not reported.
        det_fn: determinant as a function of ``sigma`` for bisection refinement;
            without it the bracket is resolved by linear interpolation.

    Raises:
        DegenerateFamilyError: if ``|det|`` stays at zero past the exclusion window.
    """
    monitor = ConjugateMonitor(exclusion, delta_rank)
    for sigma, value in det_trace:
        if t_max is not None and sigma > t_max + BISECTION_TOL:
            break
        found = monitor.update(sigma, value, det_fn)
        if found is not None:
            return found if t_max is None or found <= t_max else None
    monitor.finish()
    return None


# --- Building extremals ---

def _augmented_rhs(prob: ProblemDefinition) -> Callable[[float, np.ndarray], np.ndarray]:
    n = prob.state_dim

    def rhs(sigma: float, y: np.ndarray) -> np.ndarray:
        aug = AugmentedState.from_vector(y, n, with_variations=True)
        phase = backward_rhs(prob, aug.pt)
        dX_dot, dP_dot = variational_rhs(prob, aug)
        u = optimal_control(prob, aug.pt)
        cost_rate = prob.cost_weight * float(np.dot(u, u))
        return np.concatenate([phase, dX_dot.ravel(), dP_dot.ravel(), [cost_rate]])

    return rhs


def _dX_of(y: np.ndarray, n: int) -> np.ndarray:
    return y[2 * n:2 * n + n * n].reshape(n, n)


def build_extremal(
    prob: ProblemDefinition,
    sample: TerminalSample,
    cfg: IntegratorConfig,
    grid_spacing: Optional[float] = None,
    exclusion: Optional[float] = None,
    delta_rank: float = DELTA_RANK,
) -> ExtremalTrajectory:
    """
    Propagate one extremal backward from ``sample`` with its variational
    matrices, stop at the first conjugate time and sample it on the grid.

    Args:
        prob: the problem.
        sample: terminal sample on the Lagrangian manifold.
        cfg: integrator configuration.
        grid_spacing: time-to-go spacing of the stored samples (defaults to
            ``cfg.output_grid_spacing``, then to ``t_f / 100``).
        exclusion: window skipped by the conjugate detector (defaults to ``1e-3 t_f``).
        delta_rank: relative collapse threshold of the detector.

    Raises:
        PropagationError: if integration fails before the horizon.
        SingularControlError: if a stored sample violates the Legendre condition.
        DegenerateFamilyError: if the variational determinant never leaves zero.
    """
    n = prob.state_dim
    spacing = grid_spacing or cfg.output_grid_spacing or prob.t_f / 100.0
    exclusion = EXCLUSION_FRACTION * prob.t_f if exclusion is None else exclusion

    dX0, dP0 = initial_conditions(prob, sample)
    y0 = np.concatenate([sample.x_f, sample.p_f, dX0.ravel(), dP0.ravel(), [0.0]])

    monitor = ConjugateMonitor(exclusion, delta_rank)
    det_trace: List[Tuple[float, float]] = [(0.0, float(np.linalg.det(dX0)))]
    scaled_trace: List[Tuple[float, float]] = [(0.0, scaled_determinant(dX0))]

    def observer(event: StepEvent) -> Optional[float]:
        dX = _dX_of(event.y, n)
        det_trace.append((event.sigma, float(np.linalg.det(dX))))
        scaled = scaled_determinant(dX)
        scaled_trace.append((event.sigma, scaled))

        def det_fn(sigma: float) -> float:
            return scaled_determinant(_dX_of(np.asarray(event.interpolant(sigma)), n))

        return monitor.update(event.sigma, scaled, det_fn)

    result = propagate(_augmented_rhs(prob), y0, (0.0, prob.t_f), cfg, observer=observer, grid_spacing=spacing)
    conjugate_time = result.final_sigma if result.terminated_early else None
    if conjugate_time is None:
        monitor.finish()
    horizon = result.final_sigma

    count = int(math.floor(horizon / spacing + GRID_TOL))
    rows = result.states[1:count + 1]
    sigmas = spacing * np.arange(1, len(rows) + 1)
    states = rows[:, :n]
    costates = rows[:, n:2 * n]
    controls = np.empty((len(rows), prob.control_dim))
    for k in range(len(rows)):
        pt = PhasePoint(x=states[k], p=costates[k])
        if not satisfies_legendre(prob, pt):
            raise SingularControlError(f"{prob.problem_id}: Legendre condition fails at sigma={sigmas[k]:.6g}")
        controls[k] = optimal_control(prob, pt)

    if conjugate_time is not None:
        logger.debug(f"{prob.problem_id}: conjugate time {conjugate_time:.8g} < t_f={prob.t_f:.6g}")
    return ExtremalTrajectory(
        terminal=sample,
        horizon=horizon,
        sigmas=sigmas,
        states=states.copy(),
        costates=costates.copy(),
        controls=controls,
        cost_to_go=rows[:, -1].copy(),
        conjugate_time=conjugate_time,
        det_trace=det_trace,
        scaled_det_trace=scaled_trace,
        n_steps=result.n_steps,
    )


# --- Consistency checks ---

def replay_forward(
    prob: ProblemDefinition, x: np.ndarray, p: np.ndarray, duration: float, cfg: IntegratorConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """Integrate the forward canonical equations from ``(x, p)`` for ``duration``; returns the end point."""
    n = prob.state_dim

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        return forward_rhs(prob, PhasePoint.from_vector(z, n))

    result = propagate(rhs, np.concatenate([x, p]), (0.0, duration), cfg)
    return result.final_state[:n], result.final_state[n:]


def hamiltonian_drift(prob: ProblemDefinition, traj: ExtremalTrajectory) -> float:
    """Largest deviation of ``h`` along the stored samples from its terminal value."""
    h0 = maximized_hamiltonian(prob, PhasePoint(x=traj.terminal.x_f, p=traj.terminal.p_f))
    values = [maximized_hamiltonian(prob, PhasePoint(x=x, p=p)) for x, p in zip(traj.states, traj.costates)]
    return float(max((abs(v - h0) for v in values), default=0.0))


def _perturbed_sample(prob: ProblemDefinition, sample: TerminalSample, direction: np.ndarray) -> TerminalSample:
    n, s = prob.state_dim, prob.constraint_dim
    if s == n:
        return TerminalSample(x_f=sample.x_f, nu=sample.nu + direction, p_f=sample.p_f + direction)
    grad = prob.terminal_gradient(sample.x_f)
    basis = kernel_basis(grad)
    nu_bar = reference_multipliers(grad, sample.p_f)
    x_f = sample.x_f + basis @ direction[:n - s]
    nu = nu_bar + direction[n - s:]
    return TerminalSample(x_f=x_f, nu=nu, p_f=nu @ prob.terminal_gradient(x_f))


def variational_consistency(
    prob: ProblemDefinition,
    sample: TerminalSample,
    cfg: IntegratorConfig,
    n_checks: int = 10,
    q_step: float = 1e-6,
    horizon: Optional[float] = None,
) -> float:
    """
    Compare ``dX/dq`` from the variational equations with central differences
    of perturbed extremals at ``n_checks`` evenly spaced times.

    Returns:
        The largest relative (Frobenius) discrepancy over the check points.
    """
    n = prob.state_dim
    horizon = horizon or prob.t_f
    spacing = horizon / n_checks
    dX0, dP0 = initial_conditions(prob, sample)
    y0 = np.concatenate([sample.x_f, sample.p_f, dX0.ravel(), dP0.ravel(), [0.0]])
    reference = propagate(_augmented_rhs(prob), y0, (0.0, horizon), cfg, grid_spacing=spacing)

    def states_of(perturbed: TerminalSample) -> np.ndarray:
        z0 = np.concatenate([perturbed.x_f, perturbed.p_f])
        rhs = lambda t, z: backward_rhs(prob, PhasePoint.from_vector(z, n))
        return propagate(rhs, z0, (0.0, horizon), cfg, grid_spacing=spacing).states[:, :n]

    fd = np.zeros((len(reference.sigmas), n, n))
    for j in range(n):
        direction = np.zeros(n)
        direction[j] = q_step
        plus = states_of(_perturbed_sample(prob, sample, direction))
        minus = states_of(_perturbed_sample(prob, sample, -direction))
        fd[:, :, j] = (plus - minus) / (2.0 * q_step)

    worst = 0.0
    for k in range(1, len(reference.sigmas)):
        dX = _dX_of(reference.states[k], n)
        worst = max(worst, float(np.linalg.norm(fd[k] - dX) / max(np.linalg.norm(dX), 1e-300)))
    return worst
