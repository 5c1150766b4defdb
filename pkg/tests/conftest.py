import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from compressive_doa import combiner
from compressive_doa.cli import bundled_design
from compressive_doa.manifold import ArrayGeometry

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def uca9():
    return ArrayGeometry.uca(9, 0.65)


@pytest.fixture(scope="session")
def opt_crb():
    return bundled_design("opt_crb")


@pytest.fixture(scope="session")
def opt_scf():
    return bundled_design("opt_scf")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def kernel95():
    """A fixed random 9 -> 5 kernel."""
    return combiner.random_kernel(5, 9, seed=7)
