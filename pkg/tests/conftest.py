import numpy as np
import pytest

from steindyn import observables, systems
from steindyn.rng import Stream


@pytest.fixture
def cos1():
    """cos 2 pi x on the circle."""
    return observables.trig_observable([{"component": 0, "freq": [1], "amp": 1.0}])


@pytest.fixture
def cos2():
    """(cos 2 pi x, cos 2 pi y) on the torus."""
    return observables.trig_observable([{"component": 0, "freq": [1, 0], "amp": 1.0},
                                        {"component": 1, "freq": [0, 1], "amp": 1.0}])


@pytest.fixture
def dbl():
    return systems.doubling()


@pytest.fixture
def cat():
    return systems.toral()


@pytest.fixture
def stream():
    return Stream(20240101)


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.shape[0]))
