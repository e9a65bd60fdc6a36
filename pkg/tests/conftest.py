import numpy as np
import pytest

from conebif.geometry import ProblemParams, make_dumbbell, mesh

# channel half-width and crossing dilation of the tuned dumbbell (h = 0.02 tuning run)
TUNED_HALFWIDTH = 0.1131370849898476
TUNED_ALPHA_HAT = 0.7100869346878018


@pytest.fixture(scope="session")
def P3():
    return ProblemParams(3)


@pytest.fixture(scope="session")
def tuned_base(P3):
    return make_dumbbell(P3, 0.5, 0.45, TUNED_HALFWIDTH)


@pytest.fixture(scope="session")
def tuned_D1(tuned_base):
    return tuned_base.dilated(TUNED_ALPHA_HAT)


@pytest.fixture(scope="session")
def coarse_D1_mesh(tuned_D1):
    return mesh(tuned_D1, 0.08)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)
