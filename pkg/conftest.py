import numpy as np
import pytest

from linalg import make_rng
from model import CovarianceModel, TaskInstance


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo reproductions (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def iso_problem():
    """Isotropic d=6 model with a fixed noiseless task."""
    d = 6
    cov = CovarianceModel.isotropic(d)
    task = TaskInstance(np.linspace(-1.0, 1.0, d))
    return cov, task
