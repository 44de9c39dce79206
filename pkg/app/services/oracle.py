"""
Verification oracles: indirect single shooting on the initial costate and the
closed-form minimum-energy solution of the double integrator.
"""
from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np

from app.exceptions import ContractViolationError, MecpError
from app.models.config import IntegratorConfig
from app.services.extremals import forward_rhs, kernel_basis
from app.services.problem_core import PhasePoint, ProblemDefinition, optimal_control, reduced_second_derivatives
from app.services.propagator import AugmentedState, propagate

logger = logging.getLogger(__name__)

MAX_NEWTON_ITERATIONS = 50
MAX_HALVINGS = 30
DEFAULT_SHOOTING_TOL = 1e-9


@dataclass
class ShootingTrajectory:
    times: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    controls: np.ndarray


@dataclass
class ShootingResult:
    converged: bool
    p0: np.ndarray
    iterations: int
    terminal_defect: float
    transversality_defect: float
    trajectory: Optional[ShootingTrajectory] = None
    message: str = ""

    @property
    def defect(self) -> float:
        return max(self.terminal_defect, self.transversality_defect)


def _forward_augmented_rhs(prob: ProblemDefinition):
    n = prob.state_dim

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        aug = AugmentedState.from_vector(y, n, with_variations=True)
        phase = forward_rhs(prob, aug.pt)
        h_xx, h_xp, h_pp = reduced_second_derivatives(prob, aug.pt)
        dX_dot = h_xp.T @ aug.dX + h_pp @ aug.dP
        dP_dot = -h_xx @ aug.dX - h_xp @ aug.dP
        return np.concatenate([phase, dX_dot.ravel(), dP_dot.ravel()])

    return rhs


def _residual(prob: ProblemDefinition, x_f: np.ndarray, p_f: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad = np.asarray(prob.terminal_gradient(x_f), dtype=float)
    basis = kernel_basis(grad)
    terminal = np.asarray(prob.terminal_constraint(x_f), dtype=float)
    tangential = basis.T @ p_f
    return np.concatenate([terminal, tangential]), grad, basis


def _evaluate(prob: ProblemDefinition, x_c: np.ndarray, t_g: float, p0: np.ndarray, cfg: IntegratorConfig):
    n = prob.state_dim
    y0 = np.concatenate([x_c, p0, np.zeros(n * n), np.eye(n).ravel()])
    end = propagate(_forward_augmented_rhs(prob), y0, (0.0, t_g), cfg).final_state
    x_f, p_f = end[:n], end[n:2 * n]
    dX = end[2 * n:2 * n + n * n].reshape(n, n)
    dP = end[2 * n + n * n:].reshape(n, n)
    r, grad, basis = _residual(prob, x_f, p_f)
    # the tangent basis is treated as constant: exact for flat terminal manifolds
    jac = np.vstack([grad @ dX, basis.T @ dP])
    return r, jac


def _trajectory(prob: ProblemDefinition, x_c: np.ndarray, t_g: float, p0: np.ndarray, cfg: IntegratorConfig,
                spacing: Optional[float]) -> ShootingTrajectory:
    n = prob.state_dim

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        return forward_rhs(prob, PhasePoint.from_vector(z, n))

    result = propagate(rhs, np.concatenate([x_c, p0]), (0.0, t_g), cfg, grid_spacing=spacing or t_g / 100.0)
    states, costates = result.states[:, :n], result.states[:, n:]
    controls = np.vstack([optimal_control(prob, PhasePoint(x=x, p=p)) for x, p in zip(states, costates)])
    return ShootingTrajectory(times=result.sigmas, states=states, costates=costates, controls=controls)


def shoot(
    prob: ProblemDefinition,
    x_c: np.ndarray,
    t_g: float,
    p0_guess: Optional[np.ndarray] = None,
    cfg: Optional[IntegratorConfig] = None,
    tolerance: float = DEFAULT_SHOOTING_TOL,
    max_iterations: int = MAX_NEWTON_ITERATIONS,
    trajectory_spacing: Optional[float] = None,
    with_trajectory: bool = True,
) -> ShootingResult:
    """
    Solve the two-point boundary-value problem from ``(x_c, t_g)`` by damped
    Newton iterations on the initial costate.

    The residual stacks ``phi(x(t_f))`` and the components of ``p(t_f)``
    tangent to the terminal manifold, so the multipliers never appear as
    unknowns. The Jacobian comes from the forward variational equations.
    Failure to converge is reported in the result, never raised.
    """
    cfg = cfg or IntegratorConfig()
    x_c = np.asarray(x_c, dtype=float)
    n, s = prob.state_dim, prob.constraint_dim
    p = np.zeros(n) if p0_guess is None else np.asarray(p0_guess, dtype=float).copy()
    if not np.all(np.isfinite(p)):
        raise ContractViolationError(f"non-finite costate guess {p}")

    if t_g <= 0:
        defect = float(np.max(np.abs(prob.terminal_constraint(x_c))))
        return ShootingResult(converged=defect < tolerance, p0=p, iterations=0,
                              terminal_defect=defect, transversality_defect=0.0,
                              message="no time left to go")

    def split(r: np.ndarray) -> Tuple[float, float]:
        terminal = float(np.max(np.abs(r[:s]))) if s else 0.0
        tangential = float(np.max(np.abs(r[s:]))) if len(r) > s else 0.0
        return terminal, tangential

    try:
        r, jac = _evaluate(prob, x_c, t_g, p, cfg)
    except MecpError as e:
        return ShootingResult(converged=False, p0=p, iterations=0, terminal_defect=np.inf,
                              transversality_defect=np.inf, message=f"initial guess: {e.message}")

    iterations = 0
    message = ""
    while np.max(np.abs(r)) >= tolerance:
        if iterations >= max_iterations:
            message = f"no convergence in {max_iterations} iterations"
            break
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        norm0 = np.linalg.norm(r)
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = p + alpha * step
            try:
                r_trial, jac_trial = _evaluate(prob, x_c, t_g, trial, cfg)
            except MecpError:
                alpha *= 0.5
                continue
            if np.linalg.norm(r_trial) < norm0:
                p, r, jac = trial, r_trial, jac_trial
                accepted = True
                break
            alpha *= 0.5
        iterations += 1
        if not accepted:
            message = "line search failed"
            break

    terminal, tangential = split(r)
    converged = max(terminal, tangential) < tolerance
    if not converged:
        logger.debug(f"Shooting from t_g={t_g:.6g} did not converge: {message} (defect {max(terminal, tangential):.3e})")
    trajectory = None
    if converged and with_trajectory:
        trajectory = _trajectory(prob, x_c, t_g, p, cfg, trajectory_spacing)
    return ShootingResult(converged=converged, p0=p, iterations=iterations, terminal_defect=terminal,
                          transversality_defect=tangential, trajectory=trajectory, message=message)


# --- Double integrator closed form ---

def double_integrator_law(x_c: np.ndarray, t_g: float) -> np.ndarray:
    """Minimum-energy feedback ``u = -6 x / t_g^2 - 4 v / t_g`` to the origin."""
    if t_g <= 0:
        raise ContractViolationError(f"double-integrator law undefined at t_g={t_g}")
    x, v = float(x_c[0]), float(x_c[1])
    return np.array([-6.0 * x / t_g ** 2 - 4.0 * v / t_g])


@dataclass(frozen=True)
class DoubleIntegratorSolution:
    """Open-loop optimum ``u(t) = a + b t`` from ``(x0, v0)`` to the origin in time ``tau``."""

    x0: float
    v0: float
    tau: float
    a: float
    b: float

    def control(self, t: float) -> float:
        return self.a + self.b * t

    def state(self, t: float) -> np.ndarray:
        return np.array([
            self.x0 + self.v0 * t + self.a * t ** 2 / 2.0 + self.b * t ** 3 / 6.0,
            self.v0 + self.a * t + self.b * t ** 2 / 2.0,
        ])

    def costate(self, t: float) -> np.ndarray:
        return np.array([-2.0 * self.b, 2.0 * self.control(t)])

    @property
    def cost(self) -> float:
        a, b, tau = self.a, self.b, self.tau
        return a * a * tau + a * b * tau ** 2 + b * b * tau ** 3 / 3.0


def double_integrator_solution(x_c: np.ndarray, t_g: float) -> DoubleIntegratorSolution:
    if t_g <= 0:
        raise ContractViolationError(f"double-integrator solution undefined at t_g={t_g}")
    x, v = float(x_c[0]), float(x_c[1])
    a = -6.0 * x / t_g ** 2 - 4.0 * v / t_g
    b = 12.0 * x / t_g ** 3 + 6.0 * v / t_g ** 2
    return DoubleIntegratorSolution(x0=x, v0=v, tau=float(t_g), a=a, b=b)
