import numpy as np
import pytest

from selkd.backend import warm_up


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # pay any JIT compilation once, before timed tests run
    warm_up()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
