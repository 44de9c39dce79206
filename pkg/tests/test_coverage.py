from pathlib import Path

import numpy as np
import pytest

from app.config import load_run_config
from app.exceptions import ConfigError
from app.models.config import IntegratorConfig
from app.services.coverage import coverage, in_box, start_state
from app.services.extremals import TerminalSample, build_extremal
from app.services.problems import build_problem

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

LOOSE = IntegratorConfig(method="rk45_adaptive", rel_tol=1e-7, abs_tol=1e-7)


def test_start_state_matches_the_extremal(di, tight):
    sample = TerminalSample.from_parameters(di, [], [-24.0, 12.0])
    traj = build_extremal(di, sample, tight, grid_spacing=0.25)
    assert traj.sigmas[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(start_state(di, sample, 1.0, tight), traj.states[-1], atol=1e-9)


def test_whole_plane_is_always_hit(di, di_spec, tight):
    report = coverage(di, di_spec, [(-1e9, 1e9)] * 2, None, tight)
    assert report.t_go == di.t_f
    assert report.hits == report.samples == di_spec.n_samples
    assert report.hit_rate == 1.0
    assert report.suggested_free_ranges is None
    for (lo, hi), (spec_lo, spec_hi) in zip(report.suggested_multiplier_ranges, di_spec.multiplier_ranges):
        assert spec_lo - 0.1 * (spec_hi - spec_lo) <= lo <= hi <= spec_hi + 0.1 * (spec_hi - spec_lo)


def test_empty_box_has_no_suggestion(di, di_spec, tight):
    report = coverage(di, di_spec, [(1e8, 1e9)] * 2, 0.5, tight)
    assert report.hits == 0
    assert report.hit_rate == 0.0
    assert report.suggested_multiplier_ranges is None


def test_box_must_match_the_state(di, di_spec, tight):
    with pytest.raises(ConfigError, match="expected 2 ranges"):
        coverage(di, di_spec, [(0.0, 1.0)], None, tight)


def test_in_box_is_inclusive():
    assert in_box(np.array([0.0, 1.0]), [(0.0, 1.0), (0.0, 1.0)])
    assert not in_box(np.array([0.0, 1.5]), [(0.0, 1.0), (0.0, 1.0)])


def _shipped(name, n_samples):
    cfg = load_run_config(CONFIG_DIR / f"{name}.yaml")
    prob = build_problem(cfg.problem.id, cfg.problem.params)
    return cfg, prob, cfg.sampling.model_copy(update={"n_samples": n_samples})


@pytest.mark.slow
def test_proximity_ranges_reach_the_box():
    cfg, prob, spec = _shipped("proximity", 3000)
    report = coverage(prob, spec, cfg.monte_carlo.tests["box"].state_ranges, None, LOOSE)
    assert report.hits >= 1
    assert report.failed == 0


@pytest.mark.slow
def test_glider_ranges_reach_the_test_1_box():
    cfg, prob, spec = _shipped("glider", 2000)
    report = coverage(prob, spec, cfg.monte_carlo.tests["test_1"].state_ranges, None, LOOSE)
    assert report.hits >= 1


@pytest.mark.slow
def test_glider_ranges_reach_vehicle_1():
    cfg, prob, spec = _shipped("glider_vehicle_1", 3000)
    v0, gamma0, x0, h0 = cfg.simulation.scenarios["vehicle_1"].initial_state
    box = [(v0 - 50.0, v0 + 50.0), (gamma0 - 0.05, gamma0 + 0.05), (x0 - 500.0, x0 + 500.0), (h0 - 500.0, h0 + 500.0)]
    report = coverage(prob, spec, box, None, LOOSE)
    assert report.hits >= 1
