import numpy as np
import pytest

from meldiff.schedule import build_linear_schedule


@pytest.fixture(scope="session")
def default_schedule():
    return build_linear_schedule()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
