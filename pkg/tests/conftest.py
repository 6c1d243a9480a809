import numpy as np
import pytest

from osslab import nn


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params(rng):
    return nn.init_params(input_dim=5, hidden=(8,), feature_dim=6,
                          num_classes=3, rng=rng)
