import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tabgraph.synth_mvn import make_mvn_dataset
from tabgraph.synth_scm import make_scm_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def mvn_ds():
    return make_mvn_dataset(1)


@pytest.fixture(scope="session")
def scm_ds():
    return make_scm_dataset(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
