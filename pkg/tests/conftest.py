import numpy as np
import pytest

from trackfront import kernels
from trackfront.cameras import PinholeCamera


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    kernels.warmup()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cam():
    return PinholeCamera(fx=458.0, fy=458.0, cx=376.0, cy=240.0,
                         baseline_times_fx=458.0 * 0.2, width=752, height=480)
