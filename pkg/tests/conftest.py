import numpy as np
import pytest

from emscreen.families import make_family


@pytest.fixture(params=["poisson", "negbin", "normal"])
def family(request):
    return make_family(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
