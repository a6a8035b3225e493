import numpy as np
import pytest

from bsrg.interaction import Interaction
from bsrg.lattice import unit_lattice
from bsrg.operators import FlowParams, RGOperators


@pytest.fixture(scope="session")
def params():
    return FlowParams.default(v0=1e-3)


@pytest.fixture(scope="session")
def unit42(params):
    return unit_lattice(1, (4, 2), params.L)


@pytest.fixture(scope="session")
def ops42(params, unit42):
    return RGOperators(params, unit42)


@pytest.fixture(scope="session")
def unit21(params):
    return unit_lattice(1, (2, 1), params.L)


@pytest.fixture(scope="session")
def ops21(params, unit21):
    return RGOperators(params, unit21)


@pytest.fixture(scope="session")
def inter(params):
    return Interaction(kind="local-quartic", lambda_n=params.lambda_n)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
