"""
Symbolic derivation of the problem derivative suite.

Problems written as sympy expressions get numpy callables for the dynamics,
the state Jacobian and the analytic second derivatives of the reduced
Hamiltonian, so the extremal propagation never needs a finite-difference
stencil for them.
"""
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple
import logging

import numpy as np
import sympy as sp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SymbolicSuite:
    """Compiled callables for one problem."""

    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    state_jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    reduced_hessian: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]


def compile_suite(
    x_syms: Sequence[sp.Symbol],
    p_syms: Sequence[sp.Symbol],
    u_syms: Sequence[sp.Symbol],
    f_exprs: Sequence[sp.Expr],
    u_star_exprs: Sequence[sp.Expr],
    cost_weight: float,
) -> SymbolicSuite:
    """
    Lambdify the dynamics, their state Jacobian and the Hessian of
    ``h(x, p) = p . f(x, u*(x, p)) - w |u*|^2``.

    Args:
        x_syms: state symbols in state order.
        p_syms: costate symbols in state order.
        u_syms: control symbols.
        f_exprs: dynamics in terms of ``x_syms`` and ``u_syms``.
        u_star_exprs: stationary control in terms of ``x_syms`` and ``p_syms``.
        cost_weight: running-cost weight ``w``.
    """
    n = len(x_syms)
    x_syms = list(x_syms)
    p_syms = list(p_syms)
    u_syms = list(u_syms)

    f_vec = sp.Matrix(f_exprs)
    jac = f_vec.jacobian(x_syms)

    substitution = dict(zip(u_syms, u_star_exprs))
    h = sum(p_i * f_i for p_i, f_i in zip(p_syms, f_exprs)) - sp.Float(cost_weight) * sum(u ** 2 for u in u_syms)
    h = h.subs(substitution)
    hess = sp.hessian(h, x_syms + p_syms)
    logger.debug(f"Compiled symbolic suite with n={n}, m={len(u_syms)}")

    f_fn = sp.lambdify((x_syms, u_syms), list(f_vec), modules="numpy", cse=True)
    jac_fn = sp.lambdify((x_syms, u_syms), jac, modules="numpy", cse=True)
    hess_fn = sp.lambdify((x_syms, p_syms), hess, modules="numpy", cse=True)

    def dynamics(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(f_fn(x, u), dtype=float).reshape(n)

    def state_jacobian(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(jac_fn(x, u), dtype=float).reshape(n, n)

    def reduced_hessian(x: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        full = np.asarray(hess_fn(x, p), dtype=float).reshape(2 * n, 2 * n)
        return full[:n, :n], full[:n, n:], full[n:, n:]

    return SymbolicSuite(dynamics=dynamics, state_jacobian=state_jacobian, reduced_hessian=reduced_hessian)
