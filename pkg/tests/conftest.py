import numpy as np
import pytest

from gwtrap._rng import Stream
from gwtrap.laws import BiasLaw, OffspringLaw, harris_transform, solve_gamma


@pytest.fixture(scope="session")
def ref_offspring():
    return OffspringLaw.from_map({0: 0.25, 2: 0.75})


@pytest.fixture(scope="session")
def ref_bias():
    return BiasLaw.from_atoms({2.0: 0.5, 3.0: 0.5})


@pytest.fixture(scope="session")
def ref_harris(ref_offspring):
    return harris_transform(ref_offspring)


@pytest.fixture(scope="session")
def ref_gamma(ref_offspring, ref_bias):
    return solve_gamma(ref_offspring, ref_bias).gamma


def stream(seed, replica=0, purpose=0):
    return Stream.from_seed(seed, replica, purpose)


@pytest.fixture
def rng():
    return stream(20260809)


def assert_close(a, b, tol, msg=""):
    assert abs(a - b) <= tol, f"{msg} |{a} - {b}| > {tol}"
