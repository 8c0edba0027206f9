import numpy as np
import pytest
from hypothesis import settings

# deterministic hypothesis runs so reports and CI are reproducible
settings.register_profile("relmux", derandomize=True, max_examples=50, deadline=None)
settings.load_profile("relmux")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
