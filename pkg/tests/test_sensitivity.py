import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from threshold_breakdown import (
    DomainError,
    EstimatorSpec,
    ScaleScoreFamily,
    ScoreFamily,
    SchemeConfig,
    WeightedSample,
    breakdown_from_curve,
    brute_force_sensitivity,
    location_bp,
    location_sensitivity,
    scale_sensitivity,
    sensitivity_curve,
    solve_location,
    two_stage_bp_bounds,
    two_stage_sensitivity_bounds,
    weighted_location_bp,
    weighted_location_sensitivity,
)
from threshold_breakdown.sensitivity import (
    a_grid,
    location_sensitivity_arrays,
    replace_extremes,
    se_plugin_sensitivity_bounds,
    se_plugin_sensitivity_upper,
    se_restricted_sensitivity,
)

samples = arrays(float, st.integers(3, 25), elements=st.floats(-20, 20, allow_nan=False))


@given(x=samples)
def test_location_sensitivity_is_monotone_in_m(x):
    s = ScoreFamily.from_name("huber")
    ms = np.arange(x.size // 2 + 1)
    up, dn = location_sensitivity_arrays(x, s, ms)
    assert up[0] == 0 and dn[0] == 0
    assert np.all(np.diff(up) >= -1e-9) and np.all(np.diff(dn) >= -1e-9)


@given(x=samples, c=st.floats(-50, 50))
def test_location_sensitivity_is_shift_invariant(x, c):
    s = ScoreFamily.from_name("logcosh")
    m = x.size // 3
    a = location_sensitivity(x, s, m=m)
    b = location_sensitivity(x + c, s, m=m)
    tol = 1e-7 * (1 + abs(c) + np.abs(x).max())
    assert b.eta_plus == pytest.approx(a.eta_plus, abs=tol)
    assert b.eta_minus == pytest.approx(a.eta_minus, abs=tol)


@given(x=samples)
def test_mirroring_swaps_sides(x):
    s = ScoreFamily.from_name("huber")
    m = max(1, x.size // 4)
    a = location_sensitivity(x, s, m=m)
    b = location_sensitivity(-x, s, m=m)
    tol = 1e-7 * (1 + np.abs(x).max())
    assert a.eta_plus == pytest.approx(b.eta_minus, abs=tol)


def test_half_sample_breaks_down(huber, small_sample):
    n = small_sample.size
    p = location_sensitivity(small_sample, huber, m=math.ceil(n / 2))
    assert math.isinf(p.eta_plus) and p.breakdown
    assert math.isfinite(location_sensitivity(small_sample, huber, m=n // 2).eta_plus)


def test_unbounded_score_breaks_with_one_point(small_sample):
    p = location_sensitivity(small_sample, ScoreFamily.from_name("mean"), m=1)
    assert math.isinf(p.eta_plus) and math.isinf(p.eta_minus)


def test_huber_closed_form_one_replacement():
    # one point to +inf adds delta to the score sum; with all residuals in the
    # linear zone the shift is delta / (n - 1)
    x = np.array([-0.3, -0.1, 0.0, 0.1, 0.3])
    s = ScoreFamily("huber", 1.0)
    p = location_sensitivity(x, s, m=1)
    kept = x[1:]
    assert p.eta_plus == pytest.approx(kept.mean() + 1.0 / 4 - 0.0)


@pytest.mark.parametrize("kind", ("huber", "logcosh", "sign"))
@pytest.mark.parametrize("side", ("plus", "minus"))
def test_location_matches_oracle(kind, side, rng):
    s = ScoreFamily.from_name(kind)
    spec = EstimatorSpec("location", s)
    for _ in range(5):
        x = np.round(rng.normal(size=6), 2)
        for m in range(0, 4):
            fast = getattr(location_sensitivity(x, s, m=m), f"eta_{side}")
            assert fast == pytest.approx(brute_force_sensitivity(x, spec, m, side), abs=1e-9)


@given(x=samples, eta=st.floats(0.01, 5))
def test_bp_is_first_crossing_of_curve(x, eta):
    s = ScoreFamily.from_name("huber")
    curve = sensitivity_curve(x, EstimatorSpec("location", s), range(x.size + 1))
    for side in ("plus", "minus", "two_sided"):
        assert location_bp(x, s, None, eta, side).m == breakdown_from_curve(curve, eta, side).m


def test_bp_rejects_nonpositive_eta(huber, small_sample):
    with pytest.raises(DomainError):
        location_bp(small_sample, huber, None, 0.0)


def test_bp_fraction(huber, small_sample):
    r = location_bp(small_sample, huber, None, 0.5, "plus")
    assert r.bp == r.m / small_sample.size


def test_scale_minus_is_capped_by_sigma(huber_chi, small_sample):
    p = scale_sensitivity(small_sample, huber_chi, m=small_sample.size - 1)
    from threshold_breakdown import solve_scale
    assert p.eta_minus == pytest.approx(solve_scale(small_sample, huber_chi).sigma_hat)


@given(w=arrays(float, 8, elements=st.floats(0.05, 5)), m=st.integers(1, 3))
def test_weighted_uniform_weights_match_unweighted(w, m):
    s = ScoreFamily.from_name("huber")
    x = np.array([-2.1, -0.7, -0.2, 0.0, 0.4, 0.9, 1.7, 3.3])
    u = weighted_location_sensitivity(WeightedSample.uniform(x), s, None, m)
    e = location_sensitivity(x, s, m=m)
    assert u.eta_plus == pytest.approx(e.eta_plus, abs=1e-9)
    assert u.eta_minus == pytest.approx(e.eta_minus, abs=1e-9)
    ws = WeightedSample(x, w)
    r = weighted_location_bp(ws, s, None, 0.5, "plus")
    if r.m is not None:
        assert weighted_location_sensitivity(ws, s, None, r.m).eta_plus >= 0.5 - 1e-9


def test_two_stage_bounds_bracket_oracle(huber, huber_chi):
    x = np.array([-1.1, -0.2, 0.3, 0.8, 2.4])
    spec = EstimatorSpec("two_stage", huber, huber_chi)
    lo, up = two_stage_sensitivity_bounds(x, huber, huber_chi, 1)
    for side in ("plus", "minus"):
        v = brute_force_sensitivity(x, spec, 1, side)
        assert getattr(lo, f"eta_{side}") - 1e-9 <= v <= getattr(up, f"eta_{side}") + 1e-9


def test_two_stage_bp_bounds_are_ordered(huber, huber_chi, rng):
    x = rng.normal(size=30)
    low, high = two_stage_bp_bounds(x, huber, huber_chi, 0.5)
    assert low.m is not None and high.m is not None and low.m <= high.m


def test_se_plugin_bounds_bracket_oracle(huber):
    x = np.array([-1.4, -0.5, 0.1, 0.6, 1.9])
    spec = EstimatorSpec("se_plugin", huber)
    lo, up = se_plugin_sensitivity_bounds(x, huber, 1)
    for side in ("plus", "minus"):
        v = brute_force_sensitivity(x, spec, 1, side)
        assert getattr(lo, f"eta_{side}") - 1e-9 <= v <= getattr(up, f"eta_{side}") + 1e-9


def test_se_plugin_envelope_is_not_looser(huber, rng):
    x = rng.normal(size=25)
    plain = se_plugin_sensitivity_upper(x, huber, 3)
    env = se_plugin_sensitivity_upper(x, huber, 3, envelope=True)
    assert env.eta_plus <= plain.eta_plus + 1e-12


def test_se_restricted_matches_oracle(huber):
    x = np.array([-0.9, -0.3, 0.2, 0.5, 1.6, 2.0])
    spec = EstimatorSpec("se_restricted", huber, theta0=0.0)
    for m in (1, 2, 3):
        p = se_restricted_sensitivity(x, huber, 0.0, m)
        assert p.eta_plus == pytest.approx(brute_force_sensitivity(x, spec, m, "plus"), abs=1e-9)
        assert p.eta_minus == pytest.approx(brute_force_sensitivity(x, spec, m, "minus"), abs=1e-9)


def test_bounded_targets_give_two_kinds(huber, huber_chi):
    x = np.linspace(-1, 1, 9)
    curve = sensitivity_curve(x, EstimatorSpec("two_stage", huber, huber_chi), [1, 2])
    assert {p.kind for p in curve.points} == {"lower_bound", "upper_bound"}
    assert np.all(curve.values("upper_bound") >= curve.values("lower_bound") - 1e-12)


def test_scheme_config_and_replacement():
    xs = np.array([0.0, 1.0, 2.0, 3.0])
    assert SchemeConfig().resolve(xs, "left") == [math.inf, 3.0]
    assert list(replace_extremes(xs, 2, 9.0, "low")) == [2.0, 3.0, 9.0, 9.0]
    assert list(replace_extremes(xs, 1, -9.0, "high")) == [-9.0, 0.0, 1.0, 2.0]


def test_a_grid_hits_score_levels(huber):
    g = a_grid(huber)
    assert np.all(np.diff(g) > 0)
    assert np.allclose(g, np.arange(-1, 11) / 10)
    s = ScoreFamily.from_name("logcosh")
    g = a_grid(s)
    levels = s.psi(g[np.isfinite(g)] * s.delta) / s.delta
    assert np.allclose(levels, np.arange(-1, levels.size - 1) / 10)


def test_unknown_target_and_side(huber, small_sample):
    with pytest.raises(DomainError):
        sensitivity_curve(small_sample, EstimatorSpec("nope", huber))
    with pytest.raises(DomainError):
        location_bp(small_sample, huber, None, 1.0, "sideways")
    with pytest.raises(DomainError):
        location_sensitivity(small_sample, huber, m=99)


def test_precomputed_theta_is_used(huber, small_sample):
    t = solve_location(small_sample, huber).theta_hat
    assert location_sensitivity(small_sample, huber, t, 2) == location_sensitivity(
        small_sample, huber, None, 2)
