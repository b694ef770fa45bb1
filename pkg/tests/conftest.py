import numpy as np
import pytest

from adaptive_design.lti import ModelParams

THETA_B = np.array([0.9, 0.6, 0.2, 0.3])
THETA_D = np.array([-1.2, 0.75, -0.2])
SIGMA2 = 0.1


@pytest.fixture
def ararx():
    return ModelParams.from_polys(b=THETA_B, d=THETA_D)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
