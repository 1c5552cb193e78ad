import numpy as np
import pytest

from spoofcm.autodiff import set_default_dtype


@pytest.fixture(autouse=True)
def _f64_default():
    """Keep the global dtype at float64 around every test."""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
