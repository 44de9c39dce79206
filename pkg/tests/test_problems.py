import math

import numpy as np
import pytest

from app.exceptions import ConfigError, DomainViolationError, SingularControlError
from app.models.problem import GlidingVehicleParams
from app.services.oracle import double_integrator_solution
from app.services.problem_core import PhasePoint, optimal_control
from app.services.problems import (
    build_problem,
    double_integrator_problem,
    glider_problem,
    proximity_problem,
    proximity_radius,
    registered_problems,
)
from app.services.extremals import forward_rhs


# --- Gliding vehicle ---

def test_glider_drag_coefficients():
    params = GlidingVehicleParams()
    assert params.k1 == pytest.approx(0.5 * 1.225 * 0.0324 * 0.2)
    assert params.k2 == pytest.approx(2 * 0.1 * 100.0 ** 2 / (1.225 * 0.0324))


def test_glider_control_vanishes_without_flight_path_costate(glider):
    u = optimal_control(glider, PhasePoint(x=np.array([1200.0, 0.1, -1e4, 3e3]), p=np.array([0.3, 0.0, 1.0, 1.0])))
    assert u[0] == 0.0


def test_glider_control_by_hand(glider):
    u = optimal_control(glider, PhasePoint(x=np.array([1500.0, 0.0, 0.0, 0.0]), p=np.array([0.0, 2.0, 0.0, 0.0])))
    assert u[0] == pytest.approx(1.0 / 1500.0, rel=1e-12)


def test_glider_singular_denominator(glider):
    k2 = glider.params["km"] * 2 * glider.params["mass"] ** 2 / (glider.params["rho"] * glider.params["ref_area"])
    p_v = -2.0 * glider.params["mass"] * 1000.0 ** 2 / k2
    with pytest.raises(SingularControlError):
        optimal_control(glider, PhasePoint(x=np.array([1000.0, 0.0, 0.0, 0.0]), p=np.array([p_v, 1.0, 0.0, 0.0])))


def test_glider_level_flight_readoff(glider):
    V, a = 800.0, 3.0
    f = glider.dynamics(np.array([V, 0.0, -1e4, 2e3]), np.array([a]))
    assert f[3] == 0.0
    assert f[1] == pytest.approx((a - 9.8) / V, rel=1e-14)
    assert f[2] == pytest.approx(V)


def test_glider_rejects_non_positive_speed(glider):
    with pytest.raises(DomainViolationError):
        glider.validate_state(np.array([0.0, 0.0, 0.0, 0.0]))


def test_glider_rejects_non_positive_final_time():
    with pytest.raises(ValueError):
        glider_problem(GlidingVehicleParams(), 0.0)


# --- Spacecraft proximity ---

def test_proximity_equilibrium_at_target(proximity):
    f = proximity.dynamics(np.zeros(4), np.zeros(2))
    np.testing.assert_array_equal(f, np.zeros(4))


def test_proximity_control_is_velocity_costate(proximity):
    u = optimal_control(proximity, PhasePoint(x=np.zeros(4), p=np.array([0.0, 0.0, 0.3, -0.4])))
    np.testing.assert_allclose(u, [0.3, -0.4])


def test_proximity_radius():
    assert proximity_radius(np.array([0.2, 0.2, 0.0, 0.0])) == pytest.approx(math.sqrt(1.48))


def test_proximity_linearization_is_clohessy_wiltshire(proximity):
    jac = proximity.state_jacobian(np.zeros(4), np.zeros(2))
    expected = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [3.0, 0.0, 0.0, 2.0],
        [0.0, 0.0, -2.0, 0.0],
    ])
    np.testing.assert_allclose(jac, expected, atol=1e-10)


def test_proximity_collision_is_a_domain_violation(proximity):
    with pytest.raises(DomainViolationError):
        proximity.validate_state(np.array([-1.0, 0.0, 0.0, 0.0]))


def test_proximity_terminal_manifold(proximity):
    assert proximity.constraint_dim == 2
    assert proximity.free_dim == 2
    np.testing.assert_array_equal(proximity.terminal_chart(np.array([0.1, -0.2])), [0.0, 0.0, 0.1, -0.2])
    np.testing.assert_array_equal(proximity.terminal_hessian_contraction(np.ones(2), np.zeros(4)), np.zeros((4, 4)))


# --- Double integrator ---

def test_double_integrator_control(di):
    assert optimal_control(di, PhasePoint(x=np.zeros(2), p=np.array([0.0, 4.0])))[0] == 2.0


def test_double_integrator_closed_form_cost():
    sol = double_integrator_solution(np.array([1.0, 0.0]), 1.0)
    assert sol.cost == pytest.approx(12.0)
    assert sol.control(0.0) == pytest.approx(-6.0)
    assert sol.control(1.0) == pytest.approx(6.0)
    np.testing.assert_allclose(sol.costate(0.0), [-24.0, -12.0])


def test_double_integrator_closed_form_solves_canonical_equations(di):
    sol = double_integrator_solution(np.array([1.0, 0.0]), 1.0)
    h = 1e-6
    for t in np.linspace(0.01, 0.99, 50):
        x, p = sol.state(t), sol.costate(t)
        velocity = forward_rhs(di, PhasePoint(x=x, p=p))
        numeric = np.concatenate([
            (sol.state(t + h) - sol.state(t - h)) / (2 * h),
            (sol.costate(t + h) - sol.costate(t - h)) / (2 * h),
        ])
        np.testing.assert_allclose(velocity, numeric, atol=1e-7)
    np.testing.assert_allclose(sol.state(1.0), [0.0, 0.0], atol=1e-12)


def test_double_integrator_is_a_point_target(di):
    assert di.constraint_dim == di.state_dim == 2
    assert di.free_dim == 0


# --- Registry ---

def test_registry_lists_three_problems():
    assert set(registered_problems()) == {"glider", "proximity", "double_integrator"}


def test_build_problem_caches_instances():
    assert build_problem("proximity") is build_problem("proximity")
    assert build_problem("glider", {"t_f": 20.0}) is build_problem("glider", {"t_f": 20.0})


def test_build_problem_applies_overrides():
    prob = build_problem("glider", {"cd0": 0.15, "t_f": 15.0})
    assert prob.t_f == 15.0
    assert prob.params["cd0"] == 0.15


def test_build_problem_rejects_unknown_id():
    with pytest.raises(ConfigError):
        build_problem("rocket")


def test_build_problem_rejects_bad_parameters():
    with pytest.raises(ConfigError, match="problem.params.mass"):
        build_problem("glider", {"mass": -1.0})
    with pytest.raises(ConfigError):
        build_problem("double_integrator", {"mass": 1.0})
    with pytest.raises(ConfigError):
        build_problem("proximity", {"t_f": -1.0})


def test_factories_reject_non_positive_final_time():
    with pytest.raises(ValueError):
        proximity_problem(0.0)
    with pytest.raises(ValueError):
        double_integrator_problem(-1.0)
