import numpy as np
import pytest

# One canonical base seed for every seeded fixture and study in the suite.
BASE_SEED = 20240817


@pytest.fixture
def rng():
    return np.random.default_rng(BASE_SEED)
