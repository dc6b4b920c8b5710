import numpy as np
import pytest

from bimlab.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(20240817)


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240817)
