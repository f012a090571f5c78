import math

import numpy as np
import pytest

from tslq import AdmissibleSet, CostMatrices, Environment, LqParams, admissible_set_constants
from tslq.config import default_D


def scalar_riccati(a, b, q=1.0, r=1.0):
    """Positive root of ``b^2 P^2 + ((1 - a^2) r - q b^2) P - q r = 0`` (``b != 0``)."""
    bp = (1 - a * a) * r - q * b * b
    return (-bp + math.sqrt(bp * bp + 4 * b * b * q * r)) / (2 * b * b)


@pytest.fixture(scope="session")
def ref():
    """The scalar reference system with its admissible set and constants."""
    theta = LqParams.scalar(0.9, 0.5)
    cost = CostMatrices.scalar(1.0, 1.0)
    S = AdmissibleSet(default_D(theta, cost, 2.0, 0.1), 4.0)
    S = S.with_constants(*admissible_set_constants(S, cost))
    return theta, cost, S, Environment(theta, cost)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
