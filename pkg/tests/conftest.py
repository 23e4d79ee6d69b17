import numpy as np
import pytest

from lamelab.solutions import KelvinSource, kelvin_field, xyz_gradient


@pytest.fixture
def rng():
    return np.random.default_rng(20241019)


@pytest.fixture
def xyz():
    return xyz_gradient()


@pytest.fixture
def kelvin():
    return kelvin_field(KelvinSource((0.8, 0.6, 1.6), tuple(np.ones(3) / np.sqrt(3))))
