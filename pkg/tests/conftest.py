import numpy as np
import pytest

from terrakoop.config import default_wheel, load_soil


@pytest.fixture(scope="session")
def sandy_loam():
    return load_soil("sandy_loam")


@pytest.fixture(scope="session")
def clay():
    return load_soil("clay")


@pytest.fixture(scope="session")
def wheel():
    return default_wheel()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
