"""
Minimum-effort control problem abstraction.

A problem is a smooth control system ``x' = f(x, u)`` with running cost
``w * |u|^2`` and a terminal manifold ``phi(x) = 0``. The Hamiltonian used
throughout is ``H(x, p, u) = p . f(x, u) - w |u|^2`` and every problem supplies
the stationary control ``u*(x, p)`` in closed form.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple
import logging

import numpy as np

from app.exceptions import DomainViolationError

logger = logging.getLogger(__name__)

# Relative step for the second-derivative stencil
FD_REL_STEP = 1e-5
# Relative step for derivatives of H in u (H is quadratic in u for every shipped problem)
CONTROL_FD_REL_STEP = 1e-3

Vector = np.ndarray
Matrix = np.ndarray


@dataclass(frozen=True)
class PhasePoint:
    """A state ``x`` paired with its row-vector costate ``p``."""

    x: Vector
    p: Vector

    @classmethod
    def from_vector(cls, z: Vector, n: int) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        return cls(x=z[:n], p=z[n:2 * n])

    def to_vector(self) -> Vector:
        return np.concatenate([self.x, self.p])


@dataclass(frozen=True)
class ProblemDefinition:
    """
    Immutable description of one minimum-effort control problem.

    ``reduced_hessian`` is optional; when it is missing the second derivatives
    of the maximized Hamiltonian are obtained by central differences of its
    analytic gradient.
    """

    problem_id: str
    state_dim: int
    control_dim: int
    constraint_dim: int
    cost_weight: float
    t_f: float
    dynamics: Callable[[Vector, Vector], Vector]
    state_jacobian: Callable[[Vector, Vector], Matrix]
    terminal_constraint: Callable[[Vector], Vector]
    terminal_gradient: Callable[[Vector], Matrix]
    terminal_hessian_contraction: Callable[[Vector, Vector], Matrix]
    maximizing_control: Callable[[Vector, Vector], Vector]
    terminal_chart: Callable[[Vector], Vector]
    state_lower: Vector
    state_upper: Vector
    state_names: Tuple[str, ...]
    control_names: Tuple[str, ...]
    domain_check: Optional[Callable[[Vector], Optional[str]]] = None
    reduced_hessian: Optional[Callable[[Vector, Vector], Tuple[Matrix, Matrix, Matrix]]] = None
    params: Dict[str, float] = field(default_factory=dict)

    @property
    def free_dim(self) -> int:
        """Dimension of the terminal manifold (free terminal coordinates)."""
        return self.state_dim - self.constraint_dim

    def validate_state(self, x: Vector) -> None:
        """Raise ``DomainViolationError`` unless ``x`` is finite and inside the state domain."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.state_dim,):
            raise DomainViolationError(
                f"{self.problem_id}: expected a state of length {self.state_dim}, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise DomainViolationError(f"{self.problem_id}: non-finite state {x}")
        outside = (x <= self.state_lower) | (x >= self.state_upper)
        if np.any(outside):
            names = [self.state_names[i] for i in np.flatnonzero(outside)]
            raise DomainViolationError(f"{self.problem_id}: state outside domain in {', '.join(names)}: {x}")
        if self.domain_check is not None:
            reason = self.domain_check(x)
            if reason:
                raise DomainViolationError(f"{self.problem_id}: {reason}")


# --- Hamiltonian machinery ---

def hamiltonian(prob: ProblemDefinition, pt: PhasePoint, u: Vector) -> float:
    """
    Evaluate ``H(x, p, u) = p . f(x, u) - w |u|^2``.

    Raises:
        DomainViolationError: if ``x`` lies outside the state domain or ``u`` is not finite.
    """
    prob.validate_state(pt.x)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise DomainViolationError(f"{prob.problem_id}: non-finite control {u}")
    return float(np.dot(pt.p, prob.dynamics(pt.x, u)) - prob.cost_weight * np.dot(u, u))


def optimal_control(prob: ProblemDefinition, pt: PhasePoint) -> Vector:
    """Stationary control ``u*(x, p)``; may raise ``SingularControlError``."""
    return np.atleast_1d(np.asarray(prob.maximizing_control(pt.x, pt.p), dtype=float))


def maximized_hamiltonian(prob: ProblemDefinition, pt: PhasePoint) -> float:
    """Reduced Hamiltonian ``h(x, p) = H(x, p, u*(x, p))``."""
    return hamiltonian(prob, pt, optimal_control(prob, pt))


def reduced_gradient(prob: ProblemDefinition, pt: PhasePoint) -> Tuple[Vector, Vector]:
    """
    Analytic first derivatives ``(dh/dx, dh/dp)`` of the reduced Hamiltonian.

    Stationarity of ``u*`` removes the control sensitivity, so
    ``dh/dp = f(x, u*)`` and ``dh/dx = p . df/dx(x, u*)``.
    """
    prob.validate_state(pt.x)
    u = optimal_control(prob, pt)
    h_p = np.asarray(prob.dynamics(pt.x, u), dtype=float)
    h_x = np.asarray(pt.p, dtype=float) @ np.asarray(prob.state_jacobian(pt.x, u), dtype=float)
    return h_x, h_p


def _fd_reduced_hessian(prob: ProblemDefinition, pt: PhasePoint) -> Matrix:
    n = prob.state_dim
    z0 = pt.to_vector()
    hess = np.empty((2 * n, 2 * n))
    for j in range(2 * n):
        step = FD_REL_STEP * max(1.0, abs(z0[j]))
        z_plus = z0.copy()
        z_minus = z0.copy()
        z_plus[j] += step
        z_minus[j] -= step
        g_plus = np.concatenate(reduced_gradient(prob, PhasePoint.from_vector(z_plus, n)))
        g_minus = np.concatenate(reduced_gradient(prob, PhasePoint.from_vector(z_minus, n)))
        hess[:, j] = (g_plus - g_minus) / (2.0 * step)
    return 0.5 * (hess + hess.T)


def reduced_second_derivatives(prob: ProblemDefinition, pt: PhasePoint) -> Tuple[Matrix, Matrix, Matrix]:
    """
    Second derivatives ``(H_xx, H_xp, H_pp)`` of the reduced Hamiltonian.

    ``H_xp[i, j]`` is ``d2h / dx_i dp_j``; the companion ``H_px`` is its transpose.
    Problem-supplied analytic formulas take precedence over the central-difference stencil.

    Raises:
        SingularControlError: if ``u*`` is singular anywhere in the stencil.
    """
    if prob.reduced_hessian is not None:
        prob.validate_state(pt.x)
        h_xx, h_xp, h_pp = prob.reduced_hessian(pt.x, pt.p)
        return (np.asarray(h_xx, dtype=float), np.asarray(h_xp, dtype=float), np.asarray(h_pp, dtype=float))
    n = prob.state_dim
    hess = _fd_reduced_hessian(prob, pt)
    return hess[:n, :n], hess[:n, n:], hess[n:, n:]


# --- Control-side checks ---

def control_gradient(prob: ProblemDefinition, pt: PhasePoint, u: Optional[Vector] = None) -> Vector:
    """Central-difference ``dH/du`` at ``u`` (defaults to ``u*``)."""
    u = optimal_control(prob, pt) if u is None else np.atleast_1d(np.asarray(u, dtype=float))
    grad = np.empty(prob.control_dim)
    for k in range(prob.control_dim):
        step = CONTROL_FD_REL_STEP * max(1.0, abs(u[k]))
        u_plus = u.copy()
        u_minus = u.copy()
        u_plus[k] += step
        u_minus[k] -= step
        grad[k] = (hamiltonian(prob, pt, u_plus) - hamiltonian(prob, pt, u_minus)) / (2.0 * step)
    return grad


def control_hessian(prob: ProblemDefinition, pt: PhasePoint) -> Matrix:
    """Central-difference ``d2H/du2`` at ``u*``."""
    u = optimal_control(prob, pt)
    m = prob.control_dim
    hess = np.empty((m, m))
    for k in range(m):
        step = CONTROL_FD_REL_STEP * max(1.0, abs(u[k]))
        u_plus = u.copy()
        u_minus = u.copy()
        u_plus[k] += step
        u_minus[k] -= step
        hess[:, k] = (control_gradient(prob, pt, u_plus) - control_gradient(prob, pt, u_minus)) / (2.0 * step)
    return 0.5 * (hess + hess.T)


def stationarity_residual(prob: ProblemDefinition, pt: PhasePoint) -> float:
    """Infinity norm of ``dH/du`` at ``u*``."""
    return float(np.max(np.abs(control_gradient(prob, pt))))


def satisfies_legendre(prob: ProblemDefinition, pt: PhasePoint) -> bool:
    """True when ``d2H/du2`` at ``u*`` is negative definite."""
    return bool(np.all(np.linalg.eigvalsh(control_hessian(prob, pt)) < 0.0))
