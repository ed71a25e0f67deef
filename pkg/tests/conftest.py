import numpy as np
import pytest

from cmtc.tensor import set_default_dtype


@pytest.fixture(autouse=True)
def double_precision():
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
