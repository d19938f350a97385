import numpy as np
import pytest

from s2rg.envs import BlockRotate2D, LinearSystem


@pytest.fixture
def block():
    return BlockRotate2D()


@pytest.fixture
def linear():
    return LinearSystem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
