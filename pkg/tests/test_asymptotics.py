import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from threshold_breakdown import (
    DomainError,
    ExtrapolationError,
    PopulationModel,
    ScoreFamily,
    ZState,
    asymptotic_variance_bp,
    asymptotic_variance_sensitivity,
    breakdown_state,
    maxbias_curve,
    maxbias_derivative,
    population_bp,
    population_location,
    population_sensitivity,
    sensitivity_state,
    z_constants,
    zsystem_residual,
)
from threshold_breakdown.asymptotics import H

from .oracle_values import HUBER_NORMAL_MAXBIAS


@pytest.mark.parametrize("eps", sorted(HUBER_NORMAL_MAXBIAS))
def test_population_sensitivity_matches_closed_form(eps, huber, normal):
    eta, slope = HUBER_NORMAL_MAXBIAS[eps]
    assert population_sensitivity(normal, huber, eps) == pytest.approx(eta, abs=1e-9)
    assert maxbias_derivative(normal, huber, eps) == pytest.approx(slope, rel=1e-8)


def test_symmetric_model_gives_equal_sides(robust_score, normal):
    a = population_sensitivity(normal, robust_score, 0.2, "plus")
    b = population_sensitivity(normal, robust_score, 0.2, "minus")
    assert a == pytest.approx(b, abs=1e-9)


def test_uniform_closed_form(huber):
    # with the Huber clip inactive the plus-side equation is linear in eta
    m = PopulationModel.uniform(-1.0, 1.0)
    for eps in (0.05, 0.1, 0.15):
        assert population_sensitivity(m, huber, eps) == pytest.approx(
            eps * (1 + 1.345 / (1 - eps)), abs=1e-10)


def test_H_vanishes_at_the_root(huber, normal):
    eta = population_sensitivity(normal, huber, 0.1, "minus")
    assert H(normal, huber, 0.1, eta, "minus", 0.0) == pytest.approx(0.0, abs=1e-10)


def test_population_location_shifts_with_model(huber):
    assert population_location(PopulationModel.normal(2.5, 1.0), huber) == pytest.approx(2.5)


@settings(max_examples=15)
@given(eps=st.floats(0.02, 0.4))
def test_population_bp_inverts_sensitivity(eps):
    s, m = ScoreFamily.from_name("huber"), PopulationModel.normal()
    eta = population_sensitivity(m, s, eps)
    assert population_bp(m, s, eta) == pytest.approx(eps, abs=1e-9)


def test_population_bp_beyond_range_extrapolates(huber, normal):
    with pytest.raises(ExtrapolationError):
        population_bp(normal, huber, 50.0)


@pytest.mark.parametrize("eps", [0.0, 0.5, -0.1])
def test_eps_domain(eps, huber, normal):
    with pytest.raises(DomainError):
        population_sensitivity(normal, huber, eps)


def test_eps_near_half_extrapolates(huber, normal):
    with pytest.raises(ExtrapolationError):
        population_sensitivity(normal, huber, 0.4995)


def test_unbounded_score_rejected(normal):
    with pytest.raises(DomainError):
        population_sensitivity(normal, ScoreFamily.from_name("mean"), 0.1)


def test_maxbias_curve_against_frozen_values(huber, normal):
    c = maxbias_curve(normal, huber, eps_max=0.3, step=1e-3)
    for eps in (0.01, 0.05, 0.1, 0.2, 0.3):
        k = int(round(eps / 1e-3))
        assert c.eta_plus[k] == pytest.approx(HUBER_NORMAL_MAXBIAS[eps][0], abs=1e-8)
        assert c.deriv_plus[k] == pytest.approx(HUBER_NORMAL_MAXBIAS[eps][1], rel=1e-6)
    assert c.epsilons[0] == 0 and c.eta_plus[0] == 0
    assert len(c.rows()) == c.epsilons.size


def test_maxbias_curve_is_increasing(normal):
    c = maxbias_curve(normal, ScoreFamily.from_name("logcosh"), eps_max=0.2, step=5e-3)
    assert np.all(np.diff(c.eta_plus) > 0) and np.all(c.deriv_plus > 0)


@pytest.mark.parametrize("kw", [dict(eps_max=0.6), dict(step=0.0), dict(step=1.0)])
def test_maxbias_curve_validates(kw, huber, normal):
    with pytest.raises(DomainError):
        maxbias_curve(normal, huber, **kw)


def _uniform_influence_variance(eps):
    # eta_hat = (mean of the upper 1 - eps fraction) - (sample mean) + const
    q = 2 * eps - 1
    top = integrate.quad(lambda x: 0.5 * x, q, 1)[0]
    c = top + q * eps
    infl = lambda x: (max(x, q) - c) / (1 - eps) - x
    return integrate.quad(lambda x: 0.5 * infl(x) ** 2, -1, 1, points=[q])[0]


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_variance_matches_influence_function_route(eps, huber):
    m = PopulationModel.uniform(-1.0, 1.0)
    assert asymptotic_variance_sensitivity(m, huber, eps) == pytest.approx(
        _uniform_influence_variance(eps), rel=1e-8)


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.25])
def test_variance_routes_agree(eps, robust_score, normal):
    a = asymptotic_variance_sensitivity(normal, robust_score, eps, route="sandwich")
    b = asymptotic_variance_sensitivity(normal, robust_score, eps, route="expanded")
    assert a == pytest.approx(b, rel=1e-9) and a > 0


def test_variance_sides_agree_for_symmetric_model(huber, normal):
    assert asymptotic_variance_sensitivity(normal, huber, 0.1, "minus") == pytest.approx(
        asymptotic_variance_sensitivity(normal, huber, 0.1, "plus"), rel=1e-9)


def test_bp_variance_is_delta_method(huber, normal):
    z = z_constants(normal, huber, 0.1)
    V = asymptotic_variance_sensitivity(normal, huber, 0.1)
    slope = maxbias_derivative(normal, huber, 0.1)
    assert asymptotic_variance_bp(normal, huber, 0.1) == pytest.approx(V / slope ** 2, rel=1e-9)
    assert z.jacobian.shape == (3, 3)


def test_variance_unknown_route(huber, normal):
    with pytest.raises(DomainError):
        asymptotic_variance_sensitivity(normal, huber, 0.1, route="magic")


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000), side=st.sampled_from(("plus", "minus")),
       kind=st.sampled_from(("huber", "logcosh", "self_concordant")))
def test_zsystem_sensitivity_state_solves_system(seed, side, kind):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 80))
    x = rng.normal(size=n)
    s = ScoreFamily.from_name(kind)
    m = int(rng.integers(1, (n + 1) // 2))
    st_ = sensitivity_state(x, s, m, side)
    assert np.max(np.abs(zsystem_residual(x, st_, side, s))) < 1e-8


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000), eta=st.floats(0.05, 2.0))
def test_zsystem_breakdown_state_within_one_step(seed, eta):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 80))
    x = rng.standard_t(3, n)
    s = ScoreFamily.from_name("huber")
    st_ = breakdown_state(x, s, eta, "plus")
    if st_ is None:
        return
    assert abs(zsystem_residual(x, st_, "plus", s)[1]) <= 2 * s.psi_max / n


def test_zstate_rejects_nonfinite():
    with pytest.raises(DomainError):
        ZState(0.0, math.inf, 0.0, 0.1)
