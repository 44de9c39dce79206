"""
Shared fixtures: the three registered problems, tight integrator settings and
small datasets built once per session.
"""
import numpy as np
import pytest

from app.models.config import IntegratorConfig, SamplingSpec
from app.services import dataset as dataset_service
from app.services.problems import build_problem


@pytest.fixture(scope="session")
def di():
    return build_problem("double_integrator")


@pytest.fixture(scope="session")
def proximity():
    return build_problem("proximity")


@pytest.fixture(scope="session")
def glider():
    return build_problem("glider")


@pytest.fixture(scope="session")
def tight():
    return IntegratorConfig(method="rk45_adaptive", rel_tol=1e-10, abs_tol=1e-12)


@pytest.fixture(scope="session")
def di_spec():
    return SamplingSpec(
        n_samples=4,
        dt=0.25,
        multiplier_ranges=[(-30.0, 30.0), (-15.0, 15.0)],
        seed=11,
    )


@pytest.fixture(scope="session")
def di_dataset(di, di_spec, tight):
    return dataset_service.generate(di, di_spec, tight)


@pytest.fixture(scope="session")
def proximity_dataset(proximity, tight):
    spec = SamplingSpec(
        n_samples=3,
        dt=0.1,
        free_state_ranges=[(-0.3, 0.3), (-0.3, 0.3)],
        multiplier_ranges=[(-1.0, 1.0), (-1.0, 1.0)],
        seed=5,
    )
    return dataset_service.generate(proximity, spec, tight)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
