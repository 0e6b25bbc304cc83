import math

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("qcselect", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("qcselect")

from qcselect.params import DuffingParams  # noqa: E402

DT = 2.0 * math.pi / 1000


@pytest.fixture
def ref_params():
    return DuffingParams()


@pytest.fixture
def dt():
    return DT


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
