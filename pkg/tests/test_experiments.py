import numpy as np
import pytest

from threshold_breakdown import DomainError
from threshold_breakdown.experiments import (
    EXPERIMENTS,
    PRESETS,
    draw_rejecting,
    is_vshape,
    location_curve_study,
    run_experiment,
    sensitivity_draws,
    shifted_model,
    stream,
    two_stage_study,
)
from threshold_breakdown import PopulationModel, ScoreFamily


@pytest.mark.parametrize("values,ok", [
    ([3, 2, 1, 2, 3], True),
    ([3, 2, 1, 1, 3], True),
    ([3, 1, 2, 2, 3], False),
    ([3, 2, 1, 3, 2], False),
])
def test_is_vshape(values, ok):
    assert is_vshape(values, [-2, -1, 0, 1, 2]) is ok


def test_streams_are_keyed():
    a = stream(1, 2, 3).normal(size=3)
    assert np.array_equal(a, stream(1, 2, 3).normal(size=3))
    assert not np.array_equal(a, stream(1, 3, 2).normal(size=3))


def test_shifted_model_kinds():
    assert shifted_model("uniform", 2.0).support == (2.0, 3.0)
    with pytest.raises(DomainError):
        shifted_model("laplace", 0.0)


def test_draw_rejecting_counts_draws():
    seq = iter([0, 0, 1])
    s, k = draw_rejecting(None, lambda g: "x", lambda s: next(seq))
    assert k == 3


def test_presets_cover_every_experiment():
    for p in PRESETS.values():
        assert set(p) == set(EXPERIMENTS)


def test_sensitivity_draws_are_centered_scaled():
    d = sensitivity_draws(PopulationModel.normal(), ScoreFamily.from_name("huber"), 400, 0.1,
                          300, seed=0)
    assert d.shape == (300,) and abs(d.mean()) < 0.05


def test_small_location_study():
    res = location_curve_study(n=60, ms=(3, 6), reps=2, models=("normal",), losses=("huber",))
    assert res.rows and len(res.rows[0]) == len(res.columns)


def test_small_two_stage_study():
    res = two_stage_study(n=40, ms=(2,), etas=(0.5,), reps=1, models=("normal",))
    assert res.rows


def test_run_experiment_reports_config():
    res, cfg = run_experiment("fig_two_sample_vshape", "desk", seed=5)
    assert cfg["seed"] == 5 and cfg["preset"] == "desk"
    assert len(res.summary["mean_lower"]) == len(res.summary["theta"])
    with pytest.raises(DomainError):
        run_experiment("fig_pit", "huge")
