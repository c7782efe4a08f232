import numpy as np
import pytest

from slabkinetics.grid import build_velocity_grid


@pytest.fixture(scope="session")
def grid12():
    return build_velocity_grid(12, 6.0)


@pytest.fixture(scope="session")
def grid16():
    return build_velocity_grid(16, 6.0)


@pytest.fixture(scope="session")
def grid8():
    return build_velocity_grid(8, 6.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
