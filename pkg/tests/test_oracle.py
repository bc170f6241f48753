import math

import numpy as np
import pytest

from threshold_breakdown import (
    BudgetError,
    DomainError,
    EstimatorSpec,
    OracleConfig,
    ScoreFamily,
    TestSpec,
    brute_force_bp,
    brute_force_sensitivity,
    brute_force_test_bp,
)


def test_mean_breaks_with_one_point():
    spec = EstimatorSpec("location", ScoreFamily.from_name("mean"))
    assert brute_force_sensitivity([0.0, 1.0, 2.0], spec, 1, "plus") == math.inf


def test_median_shift_by_hand():
    # replacing the smallest point of {0, 1, 2, 3, 4} moves the median from 2 to 3
    spec = EstimatorSpec("location", ScoreFamily.from_name("median"))
    x = [0.0, 1.0, 2.0, 3.0, 4.0]
    assert brute_force_sensitivity(x, spec, 1, "plus") == pytest.approx(1.0)
    assert brute_force_sensitivity(x, spec, 0, "plus") == 0.0
    assert brute_force_bp(x, spec, 1.0, "plus") == 1
    assert brute_force_bp(x, spec, 1.5, "plus") == 2


def test_all_points_replaced():
    spec = EstimatorSpec("location", ScoreFamily.from_name("huber"))
    assert brute_force_sensitivity([0.0, 1.0], spec, 2, "plus") == math.inf


def test_size_guard():
    spec = EstimatorSpec("location", ScoreFamily.from_name("huber"))
    with pytest.raises(BudgetError):
        brute_force_sensitivity(np.arange(12.0), spec, 3, "plus", OracleConfig(max_n=8))


def test_side_validation():
    spec = EstimatorSpec("location", ScoreFamily.from_name("huber"))
    with pytest.raises(DomainError):
        brute_force_sensitivity([0.0, 1.0], spec, 1, "up")


def test_extra_candidates_never_reduce_the_maximum():
    spec = EstimatorSpec("se_plugin", ScoreFamily.from_name("huber"))
    x = [-1.0, -0.2, 0.4, 1.1, 1.5]
    base = brute_force_sensitivity(x, spec, 1, "plus")
    more = brute_force_sensitivity(x, spec, 1, "plus", OracleConfig(candidate_values=(0.7, 3.0)))
    assert more >= base


def test_test_oracle_finds_flip():
    huber = ScoreFamily.from_name("huber")
    x = np.array([1.8, 2.1, 2.4, 2.9, 3.3])
    res = brute_force_test_bp(x, huber, TestSpec("wald"))
    assert res.m is not None and res.bp == res.m / 5 and res.witness is not None
