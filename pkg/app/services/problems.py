"""
Problem library: planar gliding vehicle, spacecraft proximity and the
double-integrator benchmark, plus the registry used by the CLI, the API and
worker processes.
"""
from functools import lru_cache
from typing import Callable, Dict, Mapping, Optional, Tuple
import logging

import numpy as np
import sympy as sp
from pydantic import ValidationError

from app.exceptions import ConfigError, SingularControlError
from app.models.problem import DoubleIntegratorParams, GlidingVehicleParams, ProximityParams
from app.services.problem_core import ProblemDefinition
from app.services.symbolic import compile_suite

logger = logging.getLogger(__name__)

# Radius below which the proximity chaser is considered to hit the central body
MIN_ORBIT_RADIUS = 1e-6

DEFAULT_T_F = {
    "glider": 20.0,
    "proximity": 1.0,
    "double_integrator": 1.0,
}


def _selector(indices: Tuple[int, ...], n: int) -> np.ndarray:
    grad = np.zeros((len(indices), n))
    for row, col in enumerate(indices):
        grad[row, col] = 1.0
    return grad


def _zero_contraction(n: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    def contraction(nu: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.zeros((n, n))
    return contraction


# --- Gliding vehicle ---

def glider_problem(params: GlidingVehicleParams, t_f: float) -> ProblemDefinition:
    """
    Planar gliding vehicle with state ``(V, gamma, x, h)`` and normal
    acceleration ``a`` as control, steered to ``x = h = 0`` with free final
    speed and flight-path angle.

    Raises:
        ValueError: if ``t_f`` is not positive.
    """
    if t_f <= 0:
        raise ValueError(f"t_f must be positive, got {t_f}")
    m, g, k1, k2 = params.mass, params.gravity, params.k1, params.k2

    V, gam, xr, hr = sp.symbols("V gamma x h", real=True)
    pV, pg, px, ph = sp.symbols("p_V p_gamma p_x p_h", real=True)
    a = sp.Symbol("a", real=True)
    drag = k1 * V ** 2 + k2 * a ** 2 / V ** 2
    f_exprs = [
        -drag / m - g * sp.sin(gam),
        (a - g * sp.cos(gam)) / V,
        V * sp.cos(gam),
        V * sp.sin(gam),
    ]
    a_star = pg * m * V / (2 * (m * V ** 2 + k2 * pV))
    suite = compile_suite([V, gam, xr, hr], [pV, pg, px, ph], [a], f_exprs, [a_star], cost_weight=1.0)

    def maximizing_control(x: np.ndarray, p: np.ndarray) -> np.ndarray:
        speed = x[0]
        denom = m * speed ** 2 + k2 * p[0]
        # Legendre condition: d2H/da2 = -2 - 2 k2 p_V / (m V^2) < 0
        if speed <= 0 or denom <= 0:
            raise SingularControlError(
                f"glider: singular control at V={speed:.6g}, p_V={p[0]:.6g} (m V^2 + k2 p_V = {denom:.6g})"
            )
        return np.array([p[1] * m * speed / (2.0 * denom)])

    grad = _selector((2, 3), 4)

    def terminal_chart(free: np.ndarray) -> np.ndarray:
        return np.array([free[0], free[1], 0.0, 0.0])

    return ProblemDefinition(
        problem_id="glider",
        state_dim=4,
        control_dim=1,
        constraint_dim=2,
        cost_weight=1.0,
        t_f=float(t_f),
        dynamics=suite.dynamics,
        state_jacobian=suite.state_jacobian,
        terminal_constraint=lambda x: np.array([x[2], x[3]]),
        terminal_gradient=lambda x: grad.copy(),
        terminal_hessian_contraction=_zero_contraction(4),
        maximizing_control=maximizing_control,
        terminal_chart=terminal_chart,
        state_lower=np.array([0.0, -np.pi / 2, -np.inf, -np.inf]),
        state_upper=np.array([np.inf, np.pi / 2, np.inf, np.inf]),
        state_names=("V", "gamma", "x", "h"),
        control_names=("a",),
        reduced_hessian=suite.reduced_hessian,
        params={**params.model_dump(), "t_f": float(t_f)},
    )


# --- Spacecraft proximity ---

def proximity_radius(x: np.ndarray) -> float:
    """Normalized distance from the central body for a relative state."""
    return float(np.hypot(x[0] + 1.0, x[1]))


def proximity_problem(t_f: float, params: Optional[ProximityParams] = None) -> ProblemDefinition:
    """
    Normalized planar relative motion about a circular target orbit with
    state ``(x, y, v_x, v_y)``, steered to ``x = y = 0`` with half-weighted effort.
    """
    if t_f <= 0:
        raise ValueError(f"t_f must be positive, got {t_f}")
    params = params or ProximityParams()

    x, y, vx, vy = sp.symbols("x y v_x v_y", real=True)
    p_syms = sp.symbols("p_x p_y p_vx p_vy", real=True)
    ux, uy = sp.symbols("u_x u_y", real=True)
    r = sp.sqrt((x + 1) ** 2 + y ** 2)
    f_exprs = [
        vx,
        vy,
        2 * vy - (1 + x) * (1 / r ** 3 - 1) + ux,
        -2 * vx - y * (1 / r ** 3 - 1) + uy,
    ]
    suite = compile_suite([x, y, vx, vy], list(p_syms), [ux, uy], f_exprs, [p_syms[2], p_syms[3]], cost_weight=0.5)

    def domain_check(state: np.ndarray) -> Optional[str]:
        radius = proximity_radius(state)
        if radius <= MIN_ORBIT_RADIUS:
            return f"collision with the central body (r={radius:.3g})"
        return None

    grad = _selector((0, 1), 4)

    def terminal_chart(free: np.ndarray) -> np.ndarray:
        return np.array([0.0, 0.0, free[0], free[1]])

    return ProblemDefinition(
        problem_id="proximity",
        state_dim=4,
        control_dim=2,
        constraint_dim=2,
        cost_weight=0.5,
        t_f=float(t_f),
        dynamics=suite.dynamics,
        state_jacobian=suite.state_jacobian,
        terminal_constraint=lambda s: np.array([s[0], s[1]]),
        terminal_gradient=lambda s: grad.copy(),
        terminal_hessian_contraction=_zero_contraction(4),
        maximizing_control=lambda s, p: np.array([p[2], p[3]]),
        terminal_chart=terminal_chart,
        state_lower=np.full(4, -np.inf),
        state_upper=np.full(4, np.inf),
        state_names=("x", "y", "v_x", "v_y"),
        control_names=("u_x", "u_y"),
        domain_check=domain_check,
        reduced_hessian=suite.reduced_hessian,
        params={**params.model_dump(), "t_f": float(t_f)},
    )


# --- Double integrator ---

_DI_JACOBIAN = np.array([[0.0, 1.0], [0.0, 0.0]])


def double_integrator_problem(t_f: float) -> ProblemDefinition:
    """
    ``x' = v, v' = u`` with unit effort weight, steered to the origin.
    Second derivatives of the reduced Hamiltonian come from the
    finite-difference stencil.
    """
    if t_f <= 0:
        raise ValueError(f"t_f must be positive, got {t_f}")

    return ProblemDefinition(
        problem_id="double_integrator",
        state_dim=2,
        control_dim=1,
        constraint_dim=2,
        cost_weight=1.0,
        t_f=float(t_f),
        dynamics=lambda x, u: np.array([x[1], u[0]]),
        state_jacobian=lambda x, u: _DI_JACOBIAN.copy(),
        terminal_constraint=lambda x: np.array([x[0], x[1]]),
        terminal_gradient=lambda x: np.eye(2),
        terminal_hessian_contraction=_zero_contraction(2),
        maximizing_control=lambda x, p: np.array([0.5 * p[1]]),
        terminal_chart=lambda free: np.zeros(2),
        state_lower=np.full(2, -np.inf),
        state_upper=np.full(2, np.inf),
        state_names=("x", "v"),
        control_names=("u",),
        params={"t_f": float(t_f)},
    )


# --- Registry ---

def _build(problem_id: str, params: Mapping[str, float]) -> ProblemDefinition:
    params = dict(params)
    t_f = float(params.pop("t_f", DEFAULT_T_F[problem_id]))
    if problem_id == "glider":
        return glider_problem(GlidingVehicleParams(**params), t_f)
    if problem_id == "proximity":
        return proximity_problem(t_f, ProximityParams(**params))
    DoubleIntegratorParams(**params)
    return double_integrator_problem(t_f)


@lru_cache(maxsize=32)
def _cached_build(problem_id: str, frozen_params: Tuple[Tuple[str, float], ...]) -> ProblemDefinition:
    return _build(problem_id, dict(frozen_params))


def build_problem(problem_id: str, params: Optional[Mapping[str, float]] = None) -> ProblemDefinition:
    """
    Build (or fetch from cache) a registered problem.

    Args:
        problem_id: one of ``glider``, ``proximity``, ``double_integrator``.
        params: parameter overrides using the config key names, ``t_f`` included.

    Raises:
        ConfigError: for an unknown problem id or invalid parameters.
    """
    if problem_id not in DEFAULT_T_F:
        raise ConfigError(f"unknown problem '{problem_id}'; expected one of {sorted(DEFAULT_T_F)}")
    frozen = tuple(sorted((str(k), v) for k, v in (params or {}).items()))
    try:
        return _cached_build(problem_id, frozen)
    except ValidationError as e:
        details = "; ".join(f"problem.params.{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(details) from e
    except ValueError as e:
        raise ConfigError(f"problem.params: {e}") from e


def registered_problems() -> Dict[str, float]:
    """Registered problem ids mapped to their default final times."""
    return dict(DEFAULT_T_F)
