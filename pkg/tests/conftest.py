import numpy as np
import pytest

from mpkm.arith import FixedArithmetic, FloatArithmetic
from mpkm.fxp import reset_audit


@pytest.fixture(autouse=True)
def _clean_audit():
    reset_audit()
    yield


@pytest.fixture
def fx():
    return FixedArithmetic()


@pytest.fixture
def fl():
    return FloatArithmetic()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
