import numpy as np
import pytest

from darnwalk.geometry import Ball
from darnwalk.lattice import build_lattice, build_plain_lattice

# keep kernels off the machine-wide thread pool during tests
import os

os.environ.setdefault("DARNWALK_THREADS", "2")


@pytest.fixture(scope="session")
def ball2():
    return Ball(center=(0.0, 0.0), radius=0.25)


@pytest.fixture(scope="session")
def g3(ball2):
    """Level-3 darned lattice on [-2, 2]^2 around Ball(0, 1/4)."""
    return build_lattice(ball2, level=3, window_radius=2.0)


@pytest.fixture(scope="session")
def g4(ball2):
    return build_lattice(ball2, level=4, window_radius=2.0)


@pytest.fixture(scope="session")
def plain5():
    """5x5 debug lattice, no region, no star."""
    return build_plain_lattice(2, 1, 1.0)


@pytest.fixture(scope="session")
def ball3():
    return Ball(center=(0.0, 0.0, 0.0), radius=0.25)


@pytest.fixture(scope="session")
def g3d(ball3):
    """Small three-dimensional darned lattice."""
    return build_lattice(ball3, level=2, window_radius=1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
