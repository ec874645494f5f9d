import numpy as np
import pytest

from setmetric import available_backends


@pytest.fixture(params=available_backends())
def backend(request):
    """Run the test once per importable solver backend."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
