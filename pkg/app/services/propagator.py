"""
Explicit Runge-Kutta propagation with dense output on a uniform grid and a
per-step observer hook.

Adaptive integration steps ``scipy.integrate.RK45`` (Dormand-Prince 5(4) with
its quartic dense output). Fixed-step integration uses the classical RK4
scheme as an ``OdeSolver`` subclass with cubic Hermite interpolation, so both
methods are driven by the same stepping loop.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional
import logging
import math

import numpy as np
from scipy.integrate import DenseOutput, OdeSolver, RK45

from app.exceptions import ContractViolationError, MecpError, PropagationError
from app.models.config import IntegratorConfig
from app.services.problem_core import PhasePoint

logger = logging.getLogger(__name__)

Rhs = Callable[[float, np.ndarray], np.ndarray]

# Relative slack for grid points and step landing
GRID_TOL = 1e-9


@dataclass
class AugmentedState:
    """Phase point with optional sensitivity matrices ``dX = dX/dq`` and ``dP = dP/dq``."""

    pt: PhasePoint
    dX: Optional[np.ndarray] = None
    dP: Optional[np.ndarray] = None

    @property
    def has_variations(self) -> bool:
        return self.dX is not None and self.dP is not None

    def to_vector(self) -> np.ndarray:
        parts = [self.pt.x, self.pt.p]
        if self.has_variations:
            parts += [self.dX.ravel(), self.dP.ravel()]
        return np.concatenate(parts).astype(float)

    @classmethod
    def from_vector(cls, y: np.ndarray, n: int, with_variations: bool) -> "AugmentedState":
        pt = PhasePoint(x=y[:n], p=y[n:2 * n])
        if not with_variations:
            return cls(pt=pt)
        k = 2 * n
        dX = y[k:k + n * n].reshape(n, n)
        dP = y[k + n * n:k + 2 * n * n].reshape(n, n)
        return cls(pt=pt, dX=dX, dP=dP)


@dataclass
class StepEvent:
    """What the observer sees after each accepted step."""

    sigma_old: float
    sigma: float
    y: np.ndarray
    interpolant: Callable[[float], np.ndarray]


@dataclass
class PropagationResult:
    sigmas: np.ndarray
    states: np.ndarray
    final_sigma: float
    final_state: np.ndarray
    terminated_early: bool
    n_steps: int
    n_evals: int


# Observer returns None to continue, or the sigma (inside the last step) at which to stop
Observer = Callable[[StepEvent], Optional[float]]


# --- Fixed-step RK4 ---

def rk4_step(fun: Rhs, t: float, y: np.ndarray, h: float, f0: Optional[np.ndarray] = None) -> np.ndarray:
    """One classical Runge-Kutta step of size ``h``."""
    k1 = fun(t, y) if f0 is None else f0
    k2 = fun(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(fun: Rhs, y0: np.ndarray, t0: float, t1: float, step: float) -> np.ndarray:
    """Integrate from ``t0`` to ``t1`` with RK4 steps no longer than ``step`` and return the end state."""
    n_steps = max(1, int(math.ceil((t1 - t0) / step - GRID_TOL)))
    h = (t1 - t0) / n_steps
    y = np.asarray(y0, dtype=float)
    for k in range(n_steps):
        y = rk4_step(fun, t0 + k * h, y, h)
    return y


class HermiteDenseOutput(DenseOutput):
    """Cubic Hermite interpolant from end values and end slopes."""

    def __init__(self, t_old, t, y_old, y, f_old, f):
        super().__init__(t_old, t)
        self.h = t - t_old
        self.y_old = y_old
        self.y_new = y
        self.f_old = f_old
        self.f_new = f

    def _call_impl(self, t):
        s = (np.asarray(t, dtype=float) - self.t_old) / self.h
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        if s.ndim == 0:
            return h00 * self.y_old + h10 * self.h * self.f_old + h01 * self.y_new + h11 * self.h * self.f_new
        return (np.outer(self.y_old, h00) + np.outer(self.h * self.f_old, h10)
                + np.outer(self.y_new, h01) + np.outer(self.h * self.f_new, h11))


class FixedStepRK4(OdeSolver):
    """Classical RK4 with a constant step; the last step lands exactly on ``t_bound``."""

    def __init__(self, fun, t0, y0, t_bound, step, vectorized=False, **extraneous):
        super().__init__(fun, t0, y0, t_bound, vectorized)
        if step <= 0:
            raise ContractViolationError(f"fixed step must be positive, got {step}")
        self.fixed_step = float(step)
        self.t_start = float(t0)
        self.k = 0
        self.f = self.fun(self.t, self.y)
        self._y_old = None
        self._f_old = None

    def _step_impl(self):
        t = self.t
        t_next = self.t_start + self.direction * (self.k + 1) * self.fixed_step
        if self.direction * (t_next - self.t_bound) >= -GRID_TOL * self.fixed_step:
            t_next = self.t_bound
        h = t_next - t
        y_new = rk4_step(self.fun, t, self.y, h, f0=self.f)
        f_new = self.fun(t_next, y_new)
        self._y_old, self._f_old = self.y, self.f
        self.t, self.y, self.f = t_next, y_new, f_new
        self.k += 1
        return True, None

    def _dense_output_impl(self):
        return HermiteDenseOutput(self.t_old, self.t, self._y_old, self.y, self._f_old, self.f)


# --- Driver ---

def output_grid(start: float, end: float, spacing: float) -> np.ndarray:
    """Multiples of ``spacing`` from ``start`` up to ``end``, both endpoints included."""
    span = end - start
    count = int(math.floor(span / spacing + GRID_TOL))
    grid = start + spacing * np.arange(count + 1)
    if abs(grid[-1] - end) <= GRID_TOL * max(1.0, abs(end)):
        grid[-1] = end
    elif grid[-1] < end:
        grid = np.append(grid, end)
    return grid


def _make_solver(rhs: Rhs, y0: np.ndarray, start: float, end: float, cfg: IntegratorConfig) -> OdeSolver:
    if cfg.method == "rk4_fixed":
        return FixedStepRK4(rhs, start, y0, end, step=cfg.step)
    return RK45(rhs, start, y0, end, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                max_step=cfg.step if cfg.step else np.inf)


def propagate(
    rhs: Rhs,
    y0: np.ndarray,
    span: tuple,
    cfg: IntegratorConfig,
    observer: Optional[Observer] = None,
    grid_spacing: Optional[float] = None,
) -> PropagationResult:
    """
    Integrate ``y' = rhs(sigma, y)`` over ``span`` and sample on a uniform grid.

    Args:
        rhs: vector field.
        y0: initial state vector.
        span: ``(start, end)`` with ``end > start``.
        cfg: integrator configuration.
        observer: called once per accepted step; returning a sigma inside the
            step stops the integration there.
        grid_spacing: output spacing; defaults to ``cfg.output_grid_spacing``,
            and to the accepted steps when neither is given.

    Returns:
        Samples on the grid (both endpoints included) and the final state.

    Raises:
        PropagationError: on step-size underflow, ``max_steps`` exhaustion, a
            non-finite derivative or a problem error raised by ``rhs``.
    """
    start, end = float(span[0]), float(span[1])
    if not end > start:
        raise ContractViolationError(f"propagation span must be increasing, got {span}")
    spacing = grid_spacing if grid_spacing is not None else cfg.output_grid_spacing
    grid = output_grid(start, end, spacing) if spacing else None

    def guarded(t: float, y: np.ndarray) -> np.ndarray:
        dy = np.asarray(rhs(t, y), dtype=float)
        if not np.all(np.isfinite(dy)):
            raise PropagationError("non-finite derivative", t)
        return dy

    y0 = np.asarray(y0, dtype=float)
    try:
        solver = _make_solver(guarded, y0, start, end, cfg)
    except MecpError as e:
        raise PropagationError(f"initial derivative failed: {e.message}", start) from e

    sigmas: List[float] = [start]
    states: List[np.ndarray] = [y0.copy()]
    grid_idx = 1
    n_steps = 0
    terminated = False
    final_sigma, final_state = start, y0.copy()

    while solver.status == "running":
        if n_steps >= cfg.max_steps:
            raise PropagationError(f"max_steps={cfg.max_steps} exceeded", solver.t)
        last_good = solver.t
        try:
            message = solver.step()
        except MecpError as e:
            raise PropagationError(f"step failed: {e.message}", last_good) from e
        if solver.status == "failed":
            raise PropagationError(f"step failed: {message}", last_good)
        n_steps += 1

        interpolant = solver.dense_output()
        stop = observer(StepEvent(solver.t_old, solver.t, solver.y.copy(), interpolant)) if observer else None
        upper = solver.t if stop is None else min(max(float(stop), solver.t_old), solver.t)

        if grid is None:
            if stop is None:
                sigmas.append(solver.t)
                states.append(solver.y.copy())
        else:
            while grid_idx < len(grid) and grid[grid_idx] <= upper + GRID_TOL * max(1.0, abs(upper)):
                g = min(grid[grid_idx], solver.t)
                sigmas.append(float(grid[grid_idx]))
                states.append(solver.y.copy() if g == solver.t else np.asarray(interpolant(g), dtype=float))
                grid_idx += 1

        final_sigma = upper
        final_state = solver.y.copy() if upper == solver.t else np.asarray(interpolant(upper), dtype=float)
        if stop is not None:
            terminated = True
            break

    if abs(sigmas[-1] - final_sigma) > GRID_TOL * max(1.0, abs(final_sigma)):
        sigmas.append(final_sigma)
        states.append(final_state)
    else:
        sigmas[-1], states[-1] = final_sigma, final_state

    logger.debug(f"Propagated [{start:.6g}, {final_sigma:.6g}] in {n_steps} steps ({solver.nfev} evaluations)")
    return PropagationResult(
        sigmas=np.asarray(sigmas),
        states=np.vstack(states),
        final_sigma=final_sigma,
        final_state=final_state,
        terminated_early=terminated,
        n_steps=n_steps,
        n_evals=solver.nfev,
    )
