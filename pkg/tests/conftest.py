import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, ridge=1.0):
    g = rng.standard_normal((n, n))
    return g.T @ g + ridge * np.eye(n)
