import math

import numpy as np
import pytest

from app.exceptions import ContractViolationError, PropagationError
from app.models.config import IntegratorConfig
from app.services.extremals import backward_rhs, forward_rhs
from app.services.problem_core import PhasePoint, maximized_hamiltonian
from app.services.propagator import AugmentedState, integrate_fixed, output_grid, propagate


def exponential(t, y):
    return y


def test_constant_field_keeps_state(tight):
    result = propagate(lambda t, y: np.zeros_like(y), np.array([1.5, -2.0]), (0.0, 3.0), tight, grid_spacing=0.5)
    assert np.all(result.states == np.array([1.5, -2.0]))
    assert result.sigmas[0] == 0.0 and result.sigmas[-1] == 3.0


def test_exponential_growth(tight):
    result = propagate(exponential, np.array([1.0]), (0.0, 1.0), tight)
    assert result.final_state[0] == pytest.approx(math.e, abs=1e-9)


def test_grid_includes_both_endpoints(tight):
    result = propagate(exponential, np.array([1.0]), (0.0, 1.0), tight, grid_spacing=0.25)
    np.testing.assert_allclose(result.sigmas, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(result.states[:, 0], np.exp(result.sigmas), rtol=1e-8)


def test_output_grid_appends_a_short_last_interval():
    np.testing.assert_allclose(output_grid(0.0, 1.0, 0.3), [0.0, 0.3, 0.6, 0.9, 1.0])
    np.testing.assert_allclose(output_grid(0.0, 1.0, 0.1)[-1], 1.0)
    assert len(output_grid(0.0, 1.0, 0.1)) == 11


def test_double_integrator_backward_reversal(di, tight):
    rhs = lambda s, z: backward_rhs(di, PhasePoint.from_vector(z, 2))
    result = propagate(rhs, np.array([0.0, 0.0, -24.0, 12.0]), (0.0, 1.0), tight)
    np.testing.assert_allclose(result.final_state[:2], [1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(result.final_state[2:], [-24.0, -12.0], atol=1e-9)


def test_fixed_step_rk4_is_fourth_order():
    exact = math.e
    coarse = abs(integrate_fixed(exponential, np.array([1.0]), 0.0, 1.0, 0.1)[0] - exact)
    fine = abs(integrate_fixed(exponential, np.array([1.0]), 0.0, 1.0, 0.05)[0] - exact)
    assert 14.0 < coarse / fine < 18.0


def test_fixed_step_solver_lands_on_the_end():
    cfg = IntegratorConfig(method="rk4_fixed", step=0.03)
    result = propagate(exponential, np.array([1.0]), (0.0, 1.0), cfg, grid_spacing=0.1)
    assert result.final_sigma == 1.0
    assert len(result.sigmas) == 11
    assert result.final_state[0] == pytest.approx(math.e, rel=1e-6)


def test_forward_then_backward_returns_to_start(proximity, tight):
    z0 = np.array([0.2, 0.2, -0.1, -0.1, 0.5, -0.4, 0.3, 0.2])
    fwd = lambda t, z: forward_rhs(proximity, PhasePoint.from_vector(z, 4))
    bwd = lambda s, z: backward_rhs(proximity, PhasePoint.from_vector(z, 4))
    end = propagate(fwd, z0, (0.0, 1.0), tight).final_state
    back = propagate(bwd, end, (0.0, 1.0), tight).final_state
    np.testing.assert_allclose(back, z0, rtol=1e-9, atol=1e-9)


def test_hamiltonian_is_conserved(proximity, tight):
    z0 = np.array([0.0, 0.0, 0.2, -0.1, 0.8, -0.6, 0.0, 0.0])
    bwd = lambda s, z: backward_rhs(proximity, PhasePoint.from_vector(z, 4))
    result = propagate(bwd, z0, (0.0, 1.0), tight, grid_spacing=0.01)
    values = [maximized_hamiltonian(proximity, PhasePoint.from_vector(z, 4)) for z in result.states]
    assert max(values) - min(values) < 1e-8


def test_observer_sees_every_step_and_can_stop(tight):
    seen = []

    def observer(event):
        seen.append(event.sigma)
        return 0.3 if event.sigma >= 0.3 else None

    result = propagate(exponential, np.array([1.0]), (0.0, 1.0), tight, observer=observer, grid_spacing=0.1)
    assert result.terminated_early
    assert result.final_sigma == pytest.approx(0.3)
    assert result.final_state[0] == pytest.approx(math.exp(0.3), rel=1e-7)
    assert result.sigmas[-1] == pytest.approx(0.3)
    assert all(s <= 0.3 + 1e-12 for s in result.sigmas)
    assert seen == sorted(seen) and result.n_steps == len(seen)


def test_non_finite_derivative_reports_last_good_sigma(tight):
    def blows_up(t, y):
        return np.array([np.nan]) if t > 0.5 else y

    with pytest.raises(PropagationError) as info:
        propagate(blows_up, np.array([1.0]), (0.0, 1.0), tight)
    assert 0.0 <= info.value.last_sigma <= 0.5


def test_max_steps_exhaustion():
    cfg = IntegratorConfig(method="rk4_fixed", step=0.01, max_steps=3)
    with pytest.raises(PropagationError, match="max_steps"):
        propagate(exponential, np.array([1.0]), (0.0, 1.0), cfg)


def test_span_must_increase(tight):
    with pytest.raises(ContractViolationError):
        propagate(exponential, np.array([1.0]), (1.0, 0.0), tight)


def test_fixed_method_requires_a_step():
    with pytest.raises(ValueError):
        IntegratorConfig(method="rk4_fixed")


def test_augmented_state_round_trip():
    dX = np.arange(4.0).reshape(2, 2)
    dP = np.eye(2)
    aug = AugmentedState(pt=PhasePoint(x=np.array([1.0, 2.0]), p=np.array([3.0, 4.0])), dX=dX, dP=dP)
    back = AugmentedState.from_vector(aug.to_vector(), 2, with_variations=True)
    np.testing.assert_array_equal(back.dX, dX)
    np.testing.assert_array_equal(back.dP, dP)
    np.testing.assert_array_equal(back.pt.p, [3.0, 4.0])
