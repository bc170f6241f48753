"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import hashlib
import io
import math
import os
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from threshold_breakdown import (
    EstimatorSpec,
    PopulationModel,
    ScaleScoreFamily,
    ScoreFamily,
    TestSpec,
    brute_force_bp,
    brute_force_sensitivity,
    brute_force_test_bp,
    breakdown_state,
    ingest_csv,
    location_bp,
    location_sensitivity,
    maxbias_curve,
    population_sensitivity,
    run_test,
    scale_bp,
    scale_sensitivity,
    sensitivity_state,
    solve_scale,
    statistic_band,
    test_bp_bounds as one_sample_audit,
    tune_for_efficiency,
    two_sample_bp_bounds,
    two_stage_sensitivity_bounds,
    zsystem_residual,
)
from threshold_breakdown.cli import run
from threshold_breakdown.experiments import gap_study, is_vshape, normality_study, pit_study, vshape_study
from threshold_breakdown.sensitivity import se_plugin_sensitivity_bounds

pytestmark = pytest.mark.acceptance

CALCIUM_ENV = "THRESHOLD_BP_CALCIUM"
CALCIUM_DEFAULT = Path(__file__).parent / "data" / "calcium.csv"


def report(k, ok, detail, elapsed):
    print(f"CRITERION {k:2d} {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s): {detail}")
    return ok


def same(a, b, tol=1e-8):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol * max(1.0, abs(b))


def test_01_tuning_constants():
    t0 = time.perf_counter()
    expected = {"huber": 1.345, "logcosh": 1.2047, "self_concordant": 1.4811}
    got = {k: tune_for_efficiency(k, 0.95) for k in expected}
    elapsed = time.perf_counter() - t0
    ok = all(abs(got[k] - v) <= 1e-3 for k, v in expected.items()) and elapsed < 5
    detail = ", ".join(f"{k}={got[k]:.4f}" for k in expected)
    assert report(1, ok, detail, elapsed)


def test_02_oracle_equivalence_exact_formulas():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    losses = ("huber", "logcosh", "sign")
    worst, checks = 0.0, 0
    for i in range(200):
        loss = losses[i % 3]
        score = ScoreFamily.from_name(loss)
        n = int(rng.integers(2, 9))
        x = np.round(rng.standard_t(3, n), 3)
        m = int(rng.integers(0, n // 2 + 1))
        side = ("plus", "minus")[i % 2]
        eta = float(rng.uniform(0.1, 2.0))
        loc = EstimatorSpec("location", score)
        fast = getattr(location_sensitivity(x, score, m=m, side=side), f"eta_{side}")
        slow = brute_force_sensitivity(x, loc, m, side)
        assert same(fast, slow), (i, "location", fast, slow)
        worst = max(worst, abs(fast - slow) if math.isfinite(slow) else 0.0)
        assert location_bp(x, score, None, eta, side).m == brute_force_bp(x, loc, eta, side)
        checks += 2
        if loss != "sign":
            chi = ScaleScoreFamily.from_base(score)
            sc = EstimatorSpec("scale", score, chi)
            fast = getattr(scale_sensitivity(x, chi, m=m, side=side), f"eta_{side}")
            slow = brute_force_sensitivity(x, sc, m, side)
            assert same(fast, slow), (i, "scale", fast, slow)
            worst = max(worst, abs(fast - slow) if math.isfinite(slow) else 0.0)
            # a decrease of eta >= sigma_hat means implosion, reached when the
            # decrease equals sigma_hat
            sigma = solve_scale(x, chi).sigma_hat
            eta_s = min(eta, sigma) if side == "minus" else eta
            assert scale_bp(x, chi, sigma, eta, side).m == brute_force_bp(x, sc, eta_s, side)
            checks += 2
    elapsed = time.perf_counter() - t0
    ok = elapsed < 120
    assert report(2, ok, f"{checks} comparisons, max abs difference {worst:.2e}", elapsed)


def test_03_bound_sandwich():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    score = ScoreFamily.from_name("huber")
    chi = ScaleScoreFamily.from_base(score)
    violations, checks = [], 0
    for i in range(100):
        n = int(rng.integers(3, 8))
        x = np.round(rng.normal(0, 1, n), 3)
        m = int(rng.integers(1, (n - 1) // 2 + 1))
        if i % 2 == 0:
            spec = EstimatorSpec("two_stage", score, chi)
            lo, up = two_stage_sensitivity_bounds(x, score, chi, m)
        else:
            spec = EstimatorSpec("se_plugin", score)
            lo, up = se_plugin_sensitivity_bounds(x, score, m)
        for side in ("plus", "minus"):
            val = brute_force_sensitivity(x, spec, m, side)
            a, b = getattr(lo, f"eta_{side}"), getattr(up, f"eta_{side}")
            checks += 1
            if not (a - 1e-9 <= val <= b + 1e-9 * max(1.0, abs(b))):
                violations.append((i, spec.target, side, a, val, b))
    elapsed = time.perf_counter() - t0
    ok = not violations
    assert report(3, ok, f"{checks} checks, {len(violations)} violations", elapsed), violations[:5]


def test_04_test_bracket_containment():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    score = ScoreFamily.from_name("huber")
    kinds = ("wald", "restricted_wald", "fixed_sigma_wald", "score", "restricted_score")
    misses, widths = [], []
    for i in range(100):
        n = int(rng.integers(3, 7))
        x = np.round(rng.normal(float(rng.choice([0.0, 1.5])), 1, n), 3)
        kind = kinds[i % len(kinds)]
        spec = TestSpec(kind, 0.05, sigma0=1.0 if kind in ("fixed_sigma_wald", "restricted_score")
                        else None)
        audit = one_sample_audit(x, score, spec)
        if audit.bracket is None:
            continue
        o = brute_force_test_bp(x, score, spec)
        if not audit.bracket.contains(o.m):
            misses.append((i, kind, audit.bracket, o.m))
        if spec.exact:
            widths.append(audit.bracket.width)
    spec2 = TestSpec("two_sample_wald", 0.05)
    for i in range(100):
        x = np.round(rng.normal(float(rng.choice([0.0, 2.0])), 1, 4), 3)
        y = np.round(rng.normal(0, 1, 4), 3)
        audit = two_sample_bp_bounds(x, y, score, spec2)
        o = brute_force_test_bp((x, y), score, spec2)
        if not audit.bracket.contains(o.m):
            misses.append((i, "two_sample", audit.bracket, o.m))
    elapsed = time.perf_counter() - t0
    ok = not misses and all(w == 0 for w in widths)
    detail = f"{len(misses)} misses, {len(widths)} exact brackets with max width {max(widths):g}"
    assert report(4, ok, detail, elapsed), misses[:5]


@pytest.mark.slow
def test_05_vshape():
    t0 = time.perf_counter()
    res = vshape_study(n=500, reps=20)
    elapsed = time.perf_counter() - t0
    th = res.summary["theta"]
    lo, up = res.summary["mean_lower"], res.summary["mean_upper"]
    ok = is_vshape(lo, th) and is_vshape(up, th) and elapsed < 600
    detail = "mean bracket ends " + " ".join(f"{t:+.1f}:{a:.3f}/{b:.3f}"
                                             for t, a, b in zip(th, lo, up))
    assert report(5, ok, detail, elapsed)


@pytest.mark.slow
def test_06_gap_shrinkage():
    t0 = time.perf_counter()
    res = gap_study(ns=(50, 450, 1050), reps=30)
    elapsed = time.perf_counter() - t0
    s = res.summary
    ok = s["slope"] < 0 and s["p_one_sided"] < 0.05 and elapsed < 600
    assert report(6, ok, f"slope {s['slope']:.3e}, one-sided p {s['p_one_sided']:.2e}", elapsed)


def test_07_population_ode_agreement():
    t0 = time.perf_counter()
    score = ScoreFamily.from_name("huber")
    worst = 0.0
    for model in (PopulationModel.normal(), PopulationModel.uniform(-1.0, 1.0)):
        curve = maxbias_curve(model, score, eps_max=0.45, step=1e-3)
        eps = curve.epsilons
        for e in np.linspace(0.01, 0.45, 12):
            k = int(np.argmin(np.abs(eps - e)))
            for side, arr in (("plus", curve.eta_plus), ("minus", curve.eta_minus)):
                direct = population_sensitivity(model, score, float(eps[k]), side)
                worst = max(worst, abs(arr[k] - direct))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 30
    assert report(7, ok, f"max |ODE - direct| = {worst:.2e}", elapsed)


@pytest.mark.slow
def test_08_asymptotic_normality():
    t0 = time.perf_counter()
    res = normality_study(n=2000, eps=0.1, reps=2000, seeds=range(10))
    elapsed = time.perf_counter() - t0
    V = res.summary["V"]
    ratios = [r[2] / V for r in res.rows]
    passes = sum(r[4] > 0.01 for r in res.rows)
    ok = all(abs(r - 1) <= 0.10 for r in ratios) and passes >= 8 and elapsed < 900
    detail = (f"V+={V:.5f}, variance ratio range {min(ratios):.3f}-{max(ratios):.3f}, "
              f"KS not rejected in {passes}/10")
    assert report(8, ok, detail, elapsed)


@pytest.mark.slow
def test_09_pit_uniformity():
    t0 = time.perf_counter()
    res = pit_study(n=100, M=200, B=200, epsilons=(0.03, 0.1, 0.15), seeds=range(20))
    elapsed = time.perf_counter() - t0
    ps = np.array([r[3] for r in res.rows])
    frac = float(np.mean(ps > 0.01))
    ok = frac >= 0.9 and elapsed < 1200
    assert report(9, ok, f"{frac:.0%} of {ps.size} runs with KS p > 0.01", elapsed)


def test_10_zsystem_identification():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    worst4, worst5 = 0.0, 0.0
    for i in range(100):
        score = ScoreFamily.from_name(("huber", "logcosh", "self_concordant")[i % 3])
        n = int(rng.integers(5, 200))
        x = rng.standard_cauchy(n) if i % 2 else rng.normal(0, 1, n)
        side = ("plus", "minus")[i % 2]
        m = int(rng.integers(1, (n + 1) // 2))
        st = sensitivity_state(x, score, m, side)
        worst4 = max(worst4, float(np.linalg.norm(zsystem_residual(x, st, side, score))))
        bs = breakdown_state(x, score, float(rng.uniform(0.05, 2.0)), side)
        assert bs is not None
        r2 = zsystem_residual(x, bs, side, score)[1]
        worst5 = max(worst5, abs(r2) / (2 * score.psi_max / n))
    elapsed = time.perf_counter() - t0
    ok = worst4 < 1e-8 and worst5 <= 1.0 and elapsed < 10
    detail = f"sensitivity residual {worst4:.1e}, breakdown residual {worst5:.3f} of 2B/n"
    assert report(10, ok, detail, elapsed)


def _calcium_path():
    p = os.environ.get(CALCIUM_ENV)
    return Path(p) if p else CALCIUM_DEFAULT


def test_11_calcium_workflow():
    path = _calcium_path()
    if not path.is_file():
        print(f"CRITERION 11 SKIP: no calcium data at {path} (set {CALCIUM_ENV})")
        pytest.skip("calcium blood-pressure data not available")
    t0 = time.perf_counter()
    data = ingest_csv(path, column="Decrease", group_col="Treatment", mad_normalize=True)
    labels = [lab.lower() for lab in data.labels]
    i = labels.index("calcium")
    x, y = data.samples[i], data.samples[1 - i]
    score = ScoreFamily.from_name("huber")
    out = {}
    for alpha in (0.05, 0.001):
        spec = TestSpec("two_sample_wald", alpha, sided="one_sided_upper")
        rejects = run_test((x, y), score, spec).decision == 1
        band = statistic_band(x, y, score, 1, spec, "down" if rejects else "up")
        z = spec.z
        flip = band.attained < z if rejects else band.attained > z
        out[alpha] = flip
    elapsed = time.perf_counter() - t0
    ok = out[0.05] and not out[0.001]
    assert report(11, ok, f"flip at m=1: alpha=0.05 {out[0.05]}, alpha=0.001 {out[0.001]}",
                  elapsed)


def _cli_digest(args):
    buf = io.StringIO()
    code = run(args, stdout=buf)
    assert code == 0, args
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def test_12_determinism(tmp_path):
    t0 = time.perf_counter()
    x = np.random.default_rng(12).normal(0.5, 1, 40)
    y = np.random.default_rng(13).normal(0, 1, 35)
    fx, fy = tmp_path / "x.csv", tmp_path / "y.csv"
    fx.write_text("v\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    fy.write_text("v\n" + "\n".join(repr(float(v)) for v in y) + "\n")
    commands = [
        ["bootstrap", "--input", str(fx), "--m", "4", "--boot-B", "300", "--format", "json"],
        ["bootstrap", "--input", str(fx), "--eta", "0.4", "--boot-B", "300"],
        ["pit", "--eps", "0.1", "--n", "60", "--M", "40", "--boot-B", "60", "--format", "json"],
        ["sensitivity", "--input", str(fx)],
        ["test-audit", "--input", str(fx), "--input2", str(fy)],
        ["population", "--eps-max", "0.1", "--step", "0.01"],
    ]
    mismatched = []
    for cmd in commands:
        digests = {_cli_digest(cmd + ["--seed", "7", "--threads", str(t)]) for t in (1, 1, 4)}
        if len(digests) != 1:
            mismatched.append(cmd[0])
    out_dirs = [tmp_path / f"rep{t}" for t in (1, 4)]
    with redirect_stdout(io.StringIO()):
        for d, t in zip(out_dirs, (1, 4)):
            assert run(["replicate", "fig_two_sample_vshape", "--seed", "3", "--threads", str(t),
                        "--out", str(d)]) == 0
    for name in ("fig_two_sample_vshape.csv", "manifest.json"):
        if (out_dirs[0] / name).read_bytes() != (out_dirs[1] / name).read_bytes():
            mismatched.append(f"replicate:{name}")
    elapsed = time.perf_counter() - t0
    ok = not mismatched
    detail = f"{len(commands) + 1} seeded commands, mismatches: {mismatched or 'none'}"
    assert report(12, ok, detail, elapsed)
