import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cnemf.families import build_model

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def sis():
    return build_model("heterogeneous-sis", 0.5)


@pytest.fixture(scope="session")
def threshold():
    return build_model("threshold-graphon", 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SIS1_PARAMS = dict(blocks=1, kernel=0.8, infection=0.9, recovery=0.3, infection_cost=1.0, action_cost=0.3)


@pytest.fixture(scope="session")
def sis1():
    """Single-block SIS: the K=1, |X|=2, |A|=2 reference instance."""
    return build_model("heterogeneous-sis", 0.5, **SIS1_PARAMS)
