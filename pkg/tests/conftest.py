import numpy as np
import pytest

from mlqmc_eig import default_generating_vector, problem1, problem2


@pytest.fixture(scope="session")
def zvec():
    return default_generating_vector()


@pytest.fixture(scope="session")
def prob1():
    return problem1(2.0)


@pytest.fixture(scope="session")
def prob2():
    return problem2(2.0, 2.0, 2.0, 2.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
