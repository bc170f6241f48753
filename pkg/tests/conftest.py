import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from threshold_breakdown import PopulationModel, ScaleScoreFamily, ScoreFamily

settings.register_profile(
    "default", max_examples=60, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ROBUST = ("huber", "logcosh", "self_concordant")


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def huber():
    return ScoreFamily.from_name("huber")


@pytest.fixture(params=ROBUST)
def robust_score(request):
    return ScoreFamily.from_name(request.param)


@pytest.fixture
def huber_chi(huber):
    return ScaleScoreFamily.from_base(huber)


@pytest.fixture
def normal():
    return PopulationModel.normal()


@pytest.fixture
def small_sample():
    return np.array([-1.3, -0.4, 0.1, 0.35, 0.9, 2.2, 3.1])
