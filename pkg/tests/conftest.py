import numpy as np
import pytest

from stairdiff import schedule as sc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy4():
    """The 4-step schedule used by the hand-computed kernel examples."""
    return sc.build_linear_schedule(4, 0.1, 0.4)


@pytest.fixture
def sched10():
    return sc.build_linear_schedule(10, 0.02, 0.3)
