from pathlib import Path

import numpy as np
import pytest

from app.config import load_run_config
from app.exceptions import ContractViolationError, DegenerateFamilyError, SamplingError
from app.models.config import IntegratorConfig
from app.services import dataset as dataset_service
from app.services.extremals import (
    ConjugateMonitor,
    TerminalSample,
    backward_rhs,
    build_extremal,
    detect_conjugate_time,
    forward_rhs,
    hamiltonian_drift,
    initial_conditions,
    initial_conditions_full,
    initial_conditions_partial,
    kernel_basis,
    reference_multipliers,
    replay_forward,
    scaled_determinant,
    variational_consistency,
    variational_rhs,
)
from app.services.oracle import double_integrator_solution
from app.services.problem_core import PhasePoint, maximized_hamiltonian
from app.services.problems import build_problem
from app.services.propagator import AugmentedState


@pytest.fixture(scope="module")
def di_extremal(di, tight):
    sample = TerminalSample.from_state(di, np.zeros(2), np.array([-24.0, 12.0]))
    return build_extremal(di, sample, tight, grid_spacing=0.25)


# --- Terminal samples ---

def test_terminal_costate_is_derived_from_multipliers(glider):
    sample = TerminalSample.from_parameters(glider, np.array([700.0, -0.5]), np.array([1.5, -2.0]))
    np.testing.assert_array_equal(sample.x_f, [700.0, -0.5, 0.0, 0.0])
    np.testing.assert_array_equal(sample.p_f, [0.0, 0.0, 1.5, -2.0])


def test_terminal_sample_off_the_manifold(proximity):
    with pytest.raises(SamplingError):
        TerminalSample.from_state(proximity, np.array([0.1, 0.0, 0.0, 0.0]), np.zeros(2))


def test_terminal_sample_outside_the_domain(glider):
    with pytest.raises(SamplingError):
        TerminalSample.from_parameters(glider, np.array([-10.0, 0.0]), np.zeros(2))


def test_terminal_sample_dimension_checks(proximity):
    with pytest.raises(ContractViolationError):
        TerminalSample.from_parameters(proximity, np.zeros(3), np.zeros(2))
    with pytest.raises(ContractViolationError):
        TerminalSample.from_parameters(proximity, np.zeros(2), np.zeros(1))


# --- Vector fields ---

def test_backward_rhs_double_integrator(di):
    c = 1.7
    velocity = backward_rhs(di, PhasePoint(x=np.zeros(2), p=np.array([c, 0.0])))
    np.testing.assert_allclose(velocity, [0.0, 0.0, 0.0, c])


def test_backward_rhs_reverses_forward_rhs(glider):
    point = PhasePoint(x=np.array([900.0, -0.3, -5000.0, 1500.0]), p=np.array([0.5, 2.0e3, 1.0, -2.0]))
    np.testing.assert_array_equal(backward_rhs(glider, point), -forward_rhs(glider, point))


def test_backward_rhs_proximity_equilibrium(proximity):
    np.testing.assert_array_equal(backward_rhs(proximity, PhasePoint(x=np.zeros(4), p=np.zeros(4))), np.zeros(8))


def test_variational_rhs_needs_matrices(di):
    with pytest.raises(ContractViolationError):
        variational_rhs(di, AugmentedState(pt=PhasePoint(x=np.zeros(2), p=np.zeros(2))))


# --- Initial conditions ---

def test_full_initial_conditions(di):
    sample = TerminalSample.from_state(di, np.zeros(2), np.array([1.0, 2.0]))
    dX0, dP0 = initial_conditions_full(di, sample)
    np.testing.assert_array_equal(dX0, np.zeros((2, 2)))
    np.testing.assert_array_equal(dP0, np.eye(2))


def test_full_initial_conditions_need_a_point_target(proximity):
    sample = TerminalSample.from_parameters(proximity, np.zeros(2), np.zeros(2))
    with pytest.raises(ContractViolationError):
        initial_conditions_full(proximity, sample)


def test_partial_initial_conditions_proximity(proximity):
    sample = TerminalSample.from_parameters(proximity, np.zeros(2), np.array([0.4, -0.7]))
    dX0, dP0 = initial_conditions_partial(proximity, sample)
    e = np.eye(4)
    np.testing.assert_allclose(dX0, np.column_stack([e[2], e[3], np.zeros(4), np.zeros(4)]), atol=1e-15)
    np.testing.assert_allclose(dP0, np.column_stack([np.zeros(4), np.zeros(4), e[0], e[1]]), atol=1e-15)
    assert np.linalg.matrix_rank(np.vstack([dX0, dP0])) == 4


def test_partial_initial_conditions_glider(glider):
    sample = TerminalSample.from_parameters(glider, np.array([650.0, -0.4]), np.array([3.0, -1.0]))
    grad = glider.terminal_gradient(sample.x_f)
    basis = kernel_basis(grad)
    np.testing.assert_allclose(basis, np.eye(4)[:, :2], atol=1e-15)
    np.testing.assert_allclose(grad @ basis, np.zeros((2, 2)), atol=1e-15)
    np.testing.assert_allclose(reference_multipliers(grad, sample.p_f), [3.0, -1.0])
    dX0, _ = initial_conditions(glider, sample)
    assert np.linalg.det(dX0) == 0.0


def test_kernel_basis_of_a_skewed_gradient():
    grad = np.array([[1.0, 2.0, 0.0]])
    basis = kernel_basis(grad)
    assert basis.shape == (3, 2)
    np.testing.assert_allclose(basis.T @ basis, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(grad @ basis, np.zeros((1, 2)), atol=1e-12)


# --- Conjugate detection ---

def test_synthetic_conjugate_time():
    sigmas = np.linspace(0.0, 1.5, 151)
    trace = [(s, s * s * (1.0 - s)) for s in sigmas]
    found = detect_conjugate_time(trace, exclusion=0.05, det_fn=lambda s: s * s * (1.0 - s))
    assert found == pytest.approx(1.0, abs=1e-8)


def test_synthetic_conjugate_time_without_refinement():
    sigmas = np.linspace(0.0, 1.5, 151)
    trace = [(s, s * s * (1.0 - s)) for s in sigmas]
    assert detect_conjugate_time(trace, exclusion=0.05) == pytest.approx(1.0, abs=1e-3)


def test_exclusion_beyond_the_trace():
    trace = [(s, s * s * (1.0 - s)) for s in np.linspace(0.0, 1.5, 151)]
    assert detect_conjugate_time(trace, exclusion=2.0) is None


def test_conjugate_time_beyond_horizon_is_not_reported():
    trace = [(s, s * s * (1.0 - s)) for s in np.linspace(0.0, 1.5, 151)]
    assert detect_conjugate_time(trace, exclusion=0.05, t_max=0.8) is None


def test_degenerate_trace():
    trace = [(s, 0.0) for s in np.linspace(0.0, 1.0, 11)]
    with pytest.raises(DegenerateFamilyError):
        detect_conjugate_time(trace, exclusion=0.05)


def test_collapse_below_relative_threshold():
    monitor = ConjugateMonitor(exclusion=0.0, delta_rank=1e-6)
    assert monitor.update(0.1, 1.0) is None
    assert monitor.update(0.2, 2.0) is None
    assert monitor.update(0.3, 1e-9) == pytest.approx(0.3)


def test_scaled_determinant_ignores_column_magnitudes():
    dX = np.array([[1e12, 0.0], [0.0, 1e-12]])
    assert scaled_determinant(dX) == pytest.approx(1.0)
    assert scaled_determinant(np.zeros((2, 2))) == 0.0


# --- Building extremals ---

def test_double_integrator_extremal_matches_closed_form(di_extremal):
    traj = di_extremal
    np.testing.assert_allclose(traj.sigmas, [0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(traj.states[-1], [1.0, 0.0], atol=1e-8)
    assert traj.controls[-1, 0] == pytest.approx(-6.0, abs=1e-8)
    assert traj.cost_to_go[-1] == pytest.approx(12.0, abs=1e-8)
    assert traj.horizon == 1.0
    assert not traj.truncated


def test_double_integrator_samples_follow_the_analytic_trajectory(di_extremal):
    sol = double_integrator_solution(np.array([1.0, 0.0]), 1.0)
    for sigma, x, u in zip(di_extremal.sigmas, di_extremal.states, di_extremal.controls):
        t = 1.0 - sigma
        np.testing.assert_allclose(x, sol.state(t), atol=1e-8)
        assert u[0] == pytest.approx(sol.control(t), abs=1e-8)


def test_double_integrator_det_trace(di_extremal):
    assert di_extremal.det_trace[0] == (0.0, 0.0)
    checked = 0
    for sigma, det in di_extremal.det_trace:
        if 0.1 <= sigma <= 1.0:
            assert det == pytest.approx(sigma ** 4 / 48.0, rel=1e-6)
            checked += 1
    assert checked > 0
    assert detect_conjugate_time(di_extremal.scaled_det_trace, exclusion=1e-3) is None


def test_zero_proximity_extremal(proximity, tight):
    sample = TerminalSample.from_parameters(proximity, np.zeros(2), np.zeros(2))
    traj = build_extremal(proximity, sample, tight, grid_spacing=0.1)
    assert traj.horizon == proximity.t_f
    assert len(traj) == 10
    np.testing.assert_allclose(traj.states, 0.0, atol=1e-14)
    np.testing.assert_allclose(traj.controls, 0.0, atol=1e-14)


def test_det_trace_starts_at_zero_and_grows(glider, tight):
    sample = TerminalSample.from_parameters(glider, np.array([700.0, -0.5]), np.array([1.0, -1.0]))
    traj = build_extremal(glider, sample, tight, grid_spacing=0.5)
    assert traj.det_trace[0][1] == 0.0
    assert any(abs(d) > 0.0 for s, d in traj.det_trace if 0.0 < s < 1.0)


def test_cost_to_go_is_increasing(proximity, tight):
    sample = TerminalSample.from_parameters(proximity, np.array([0.1, -0.2]), np.array([0.6, 0.4]))
    traj = build_extremal(proximity, sample, tight, grid_spacing=0.05)
    assert np.all(np.diff(traj.cost_to_go) > 0.0)


# --- Consistency checks ---

PROXIMITY_SAMPLES = [
    ((0.0, 0.0), (0.5, -0.3)),
    ((0.1, 0.2), (0.5, -0.3)),
    ((-0.3, 0.1), (-1.0, 0.8)),
    ((0.4, -0.4), (1.5, 1.2)),
    ((-0.2, -0.5), (-0.7, -1.4)),
]

GLIDER_SAMPLES = [
    ((700.0, -0.5), (1.0, -1.0)),
    ((600.0, -0.8), (-2.0, 1.0)),
    ((750.0, -0.3), (0.5, 0.5)),
    ((650.0, -0.6), (2.0, -2.0)),
    ((800.0, -0.4), (-1.0, -1.5)),
]


@pytest.mark.parametrize("free,nu", PROXIMITY_SAMPLES)
def test_variational_matches_finite_differences_proximity(proximity, free, nu):
    sample = TerminalSample.from_parameters(proximity, np.array(free), np.array(nu))
    cfg = IntegratorConfig(method="rk4_fixed", step=1e-3)
    assert variational_consistency(proximity, sample, cfg, n_checks=10) < 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("free,nu", GLIDER_SAMPLES)
def test_variational_matches_finite_differences_glider(glider, free, nu):
    sample = TerminalSample.from_parameters(glider, np.array(free), np.array(nu))
    cfg = IntegratorConfig(method="rk4_fixed", step=0.01)
    assert variational_consistency(glider, sample, cfg, n_checks=10) < 1e-3


@pytest.mark.parametrize("free,nu", PROXIMITY_SAMPLES)
def test_boundary_replay_and_conservation_proximity(proximity, tight, free, nu):
    sample = TerminalSample.from_parameters(proximity, np.array(free), np.array(nu))
    traj = build_extremal(proximity, sample, tight, grid_spacing=0.1)
    assert hamiltonian_drift(proximity, traj) < 1e-8
    for sigma, x, p in zip(traj.sigmas, traj.states, traj.costates):
        x_f, _ = replay_forward(proximity, x, p, sigma, tight)
        assert np.max(np.abs(proximity.terminal_constraint(x_f))) < 1e-9


@pytest.mark.slow
@pytest.mark.parametrize("free,nu", GLIDER_SAMPLES)
def test_boundary_replay_and_conservation_glider(glider, tight, free, nu):
    sample = TerminalSample.from_parameters(glider, np.array(free), np.array(nu))
    traj = build_extremal(glider, sample, tight, grid_spacing=2.0)
    h0 = maximized_hamiltonian(glider, PhasePoint(x=sample.x_f, p=sample.p_f))
    assert hamiltonian_drift(glider, traj) < 1e-6 * max(1.0, abs(h0))
    for sigma, x, p in zip(traj.sigmas, traj.states, traj.costates):
        x_f, _ = replay_forward(glider, x, p, sigma, tight)
        assert np.max(np.abs(glider.terminal_constraint(x_f))) < 1e-6 * max(1.0, float(np.max(np.abs(x[2:]))))


# --- Replay of random dataset records ---

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def shipped_dataset(name, n_samples, dt, tight):
    cfg = load_run_config(CONFIG_DIR / f"{name}.yaml")
    prob = build_problem(cfg.problem.id, cfg.problem.params)
    spec = cfg.sampling.model_copy(update={"n_samples": n_samples, "dt": dt})
    return prob, dataset_service.generate(prob, spec, tight)


def replay_records(prob, ds, tight, count, seed):
    """Largest terminal defect and free-costate residual over ``count`` random records."""
    picks = np.random.default_rng(seed).choice(len(ds), size=min(count, len(ds)), replace=False)
    free = [i for i in range(prob.state_dim) if not np.any(prob.terminal_gradient(np.zeros(prob.state_dim))[:, i])]
    defects, residuals = [], []
    for k in picks:
        x_f, p_f = replay_forward(prob, ds.x[k], ds.p[k], float(ds.t_g[k]), tight)
        scale = max(1.0, float(np.max(np.abs(ds.x[k]))))
        defects.append(np.max(np.abs(prob.terminal_constraint(x_f))) / scale)
        residuals.append(np.max(np.abs(p_f[free])) / max(1.0, float(np.max(np.abs(ds.p[k])))))
    return len(picks), max(defects), max(residuals)


@pytest.mark.slow
def test_random_proximity_records_reach_the_target(tight):
    prob, ds = shipped_dataset("proximity", 20, 0.05, tight)
    checked, defect, residual = replay_records(prob, ds, tight, 100, seed=21)
    assert checked == 100
    assert defect < 1e-9
    assert residual < 1e-8


@pytest.mark.slow
def test_random_glider_records_reach_the_target(tight):
    prob, ds = shipped_dataset("glider", 12, 2.0, tight)
    checked, defect, residual = replay_records(prob, ds, tight, 100, seed=22)
    assert checked == min(100, len(ds))
    assert checked >= 50
    assert defect < 1e-6
    assert residual < 1e-5
