import numpy as np
import pytest

from spdam.geometry import LogCholesky, LogEuclidean


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=[LogCholesky(), LogEuclidean()], ids=lambda g: g.name)
def geom(request):
    return request.param
