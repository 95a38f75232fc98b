import numpy as np
import pytest

from stereomot import TankBounds, default_rig


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture(scope="session")
def tank():
    return TankBounds()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
