import math

import numpy as np
import pytest

from threshold_breakdown import NumericError, PopulationModel


@pytest.mark.parametrize("model,mean,var", [
    (PopulationModel.normal(1.0, 2.0), 1.0, 4.0),
    (PopulationModel.uniform(-1.0, 3.0), 1.0, 16 / 12),
])
def test_moments_by_quadrature(model, mean, var):
    assert model.expect(lambda t: t) == pytest.approx(mean, abs=1e-10)
    assert model.expect(lambda t: (t - mean) ** 2) == pytest.approx(var, rel=1e-10)


def test_truncated_expectation_and_prob():
    m = PopulationModel.normal()
    assert m.expect(lambda t: 1.0, lo=0.0) == pytest.approx(0.5)
    assert m.prob(-1.0, 1.0) == pytest.approx(0.6826894921370859)
    assert m.prob(1.0, -1.0) == 0.0


def test_kinks_are_respected():
    m = PopulationModel.normal()
    val = m.expect(lambda t: min(max(t, -1.345), 1.345) ** 2, points=(-1.345, 1.345))
    assert val == pytest.approx(0.7101645482690484, rel=1e-10)


def test_cauchy_bounded_integrand():
    m = PopulationModel.cauchy()
    assert m.expect(lambda t: math.atan(t) ** 2) > 0


def test_quadrature_failure_is_reported():
    with pytest.raises(NumericError):
        PopulationModel.cauchy().expect(lambda t: t * t)


def test_mixture_quantile_inverts_cdf():
    m = PopulationModel.normal_mixture([0.9, 0.1], [0.0, 5.0], [1.0, 1.0])
    for u in (0.1, 0.5, 0.95):
        assert float(m.cdf(m.ppf(u))) == pytest.approx(u, abs=1e-12)
    x = m.sample(np.random.default_rng(0), 20000)
    assert np.mean(x) == pytest.approx(0.5, abs=0.05)
