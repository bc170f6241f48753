"""Seeded simulation studies that produce the data behind the standard figures.

Every study draws its samples from ``SeedSequence(seed, spawn_key=...)``
streams keyed by the loop indices, so a study returns the same rows whatever
the evaluation order.  Presets only change replication counts and grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .asymptotics import (
    asymptotic_variance_sensitivity,
    population_sensitivity,
)
from .bootstrap import BootstrapConfig, pit_uniformity
from .distributions import PopulationModel
from .errors import DomainError, NumericError
from .estimators import location_roots
from .score import ScaleScoreFamily, ScoreFamily
from .sensitivity import (
    location_sensitivity_arrays,
    two_stage_bp_bounds,
    two_stage_scheme_sensitivity,
    two_stage_upper_arrays,
)
from .estimators import solve_location, solve_two_stage
from .testaudit import TestSpec, run_test, test_bp_bounds, two_sample_bp_bounds

EXPERIMENTS = ("fig_location_curves", "fig_two_stage", "fig_test_vshape", "fig_gap_vs_n",
               "fig_two_sample_vshape", "fig_pit")
LOSSES = ("huber", "logcosh", "self_concordant")
MAX_REDRAWS = 100_000


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def shifted_model(kind: str, theta: float) -> PopulationModel:
    """Standard normal, Cauchy or ``Unif(0, 1)`` shifted by ``theta``."""
    if kind == "normal":
        return PopulationModel.normal(theta, 1.0)
    if kind == "cauchy":
        return PopulationModel.cauchy(theta, 1.0)
    if kind == "uniform":
        return PopulationModel.uniform(theta, theta + 1.0)
    raise DomainError(f"unknown model {kind!r}")


def draw_rejecting(rng, draw, decide):
    """Redraw until ``decide(sample) == 1``; returns the sample and the number of draws."""
    for k in range(1, MAX_REDRAWS + 1):
        s = draw(rng)
        if decide(s) == 1:
            return s, k
    raise NumericError("no rejecting sample found within the redraw limit")


# ------------------------------------------------------------- test studies

@dataclass
class StudyResult:
    rows: list
    columns: tuple
    summary: dict = field(default_factory=dict)


def vshape_study(n: int = 500, reps: int = 20, thetas=tuple(np.linspace(-2, 2, 9)),
                 loss: str = "huber", kind: str = "wald", alpha: float = 0.05,
                 seed: int = 0) -> StudyResult:
    """Reject-breakdown brackets for samples from N(theta, 1) that reject H0: theta = 0."""
    score = ScoreFamily.from_name(loss)
    spec = TestSpec(kind, alpha, 0.0, sigma0=1.0 if kind == "fixed_sigma_wald" else None)
    rows = []
    for i, th in enumerate(thetas):
        for r in range(reps):
            rng = stream(seed, i, r)
            x, tries = draw_rejecting(rng, lambda g: g.normal(th, 1.0, n),
                                      lambda s: run_test(s, score, spec).decision)
            br = test_bp_bounds(x, score, spec).reject_bp
            rows.append((float(th), r, br.lower_bp, br.upper_bp, tries))
    return StudyResult(rows, ("theta", "rep", "bp_lower", "bp_upper", "draws"),
                       _vshape_summary(rows, thetas))


def two_sample_vshape_study(n: int = 50, reps: int = 20, thetas=tuple(np.linspace(-2, 2, 9)),
                            loss: str = "huber", alpha: float = 0.05,
                            seed: int = 0) -> StudyResult:
    """Two-sample analogue: x ~ N(0, 1), y ~ N(theta, 1), balanced sizes."""
    score = ScoreFamily.from_name(loss)
    spec = TestSpec("two_sample_wald", alpha)
    rows = []
    for i, th in enumerate(thetas):
        for r in range(reps):
            rng = stream(seed, i, r)
            (x, y), tries = draw_rejecting(
                rng, lambda g: (g.normal(0.0, 1.0, n), g.normal(th, 1.0, n)),
                lambda s: run_test(s, score, spec).decision)
            br = two_sample_bp_bounds(x, y, score, spec).reject_bp
            rows.append((float(th), r, br.lower_bp, br.upper_bp, tries))
    return StudyResult(rows, ("theta", "rep", "bp_lower", "bp_upper", "draws"),
                       _vshape_summary(rows, thetas))


def _vshape_summary(rows, thetas):
    arr = np.array([(r[0], r[2], r[3]) for r in rows], float)
    out = {"theta": [float(t) for t in thetas], "mean_lower": [], "mean_upper": []}
    for th in thetas:
        sel = arr[arr[:, 0] == float(th)]
        out["mean_lower"].append(float(np.mean(sel[:, 1])))
        out["mean_upper"].append(float(np.mean(sel[:, 2])))
    return out


def is_vshape(values, thetas) -> bool:
    """Minimum at the grid point nearest 0 and nondecreasing away from it on both arms."""
    v = np.asarray(values, float)
    k = int(np.argmin(np.abs(np.asarray(thetas, float))))
    if int(np.argmin(v)) != k and v.min() < v[k]:
        return False
    left = v[: k + 1][::-1]
    right = v[k:]
    return bool(np.all(np.diff(left) >= 0) and np.all(np.diff(right) >= 0))


def gap_study(ns=(50, 450, 1050), reps: int = 30, theta: float = 1.0, model: str = "normal",
              loss: str = "huber", kind: str = "wald", alpha: float = 0.05,
              seed: int = 0) -> StudyResult:
    """Upper minus lower reject-breakdown bound against ``n`` at a fixed effect."""
    score = ScoreFamily.from_name(loss)
    spec = TestSpec(kind, alpha, 0.0)
    pop = shifted_model(model, theta)
    rows = []
    for i, n in enumerate(ns):
        for r in range(reps):
            rng = stream(seed, i, r)
            x, tries = draw_rejecting(rng, lambda g: pop.sample(g, n),
                                      lambda s: run_test(s, score, spec).decision)
            br = test_bp_bounds(x, score, spec).reject_bp
            gap = br.upper_bp - br.lower_bp
            rows.append((int(n), r, br.lower_bp, br.upper_bp, gap))
    arr = np.array([(r[0], r[4]) for r in rows], float)
    fit = stats.linregress(arr[:, 0], arr[:, 1])
    if fit.stderr > 0:
        t = fit.slope / fit.stderr
    else:  # exact linear fit
        t = math.copysign(math.inf, fit.slope) if fit.slope else 0.0
    p_less = float(stats.t.cdf(t, df=arr.shape[0] - 2))
    return StudyResult(rows, ("n", "rep", "bp_lower", "bp_upper", "gap"),
                       {"slope": float(fit.slope), "intercept": float(fit.intercept),
                        "stderr": float(fit.stderr), "p_one_sided": p_less})


# ------------------------------------------------------- estimator studies

def location_curve_study(n: int = 1000, ms=tuple(range(20, 461, 40)), reps: int = 100,
                         models=("normal", "cauchy", "uniform"), losses=LOSSES,
                         seed: int = 0) -> StudyResult:
    """Mean two-sided m-sensitivity of location M-estimators per model and loss."""
    rows = []
    ms = np.asarray(ms, int)
    for a, model in enumerate(models):
        pop = shifted_model(model, 0.0)
        samples = [pop.sample(stream(seed, a, r), n) for r in range(reps)]
        for b, loss in enumerate(losses):
            score = ScoreFamily.from_name(loss)
            acc = np.zeros(ms.size)
            for x in samples:
                up, dn = location_sensitivity_arrays(x, score, ms)
                acc += np.maximum(up, dn)
            for m, v in zip(ms, acc / reps):
                rows.append((model, loss, int(n), int(m), m / n, float(v)))
    return StudyResult(rows, ("model", "loss", "n", "m", "m_over_n", "eta_mean"))


def two_stage_study(n: int = 1000, ms=tuple(range(10, 151, 10)),
                    etas=tuple(np.round(np.arange(1, 11) / 10, 10)), reps: int = 100,
                    models=("normal", "cauchy", "uniform"), seed: int = 0) -> StudyResult:
    """Two-stage Huber location with Huber's proposal 2 scale: sensitivity and BP brackets."""
    score = ScoreFamily.from_name("huber")
    chi = ScaleScoreFamily.from_base(score)
    rows = []
    for a, model in enumerate(models):
        pop = shifted_model(model, 0.0)
        acc_s = np.zeros((len(ms), 2))
        acc_b = np.zeros((len(etas), 2))
        for r in range(reps):
            x = pop.sample(stream(seed, a, r), n)
            fit = solve_two_stage(x, score, chi)
            uu, ud = two_stage_upper_arrays(x, score, chi, list(ms), fit)
            for k, m in enumerate(ms):
                lu, ld, _ = two_stage_scheme_sensitivity(x, score, chi, int(m), None, fit)
                lo = max(lu, ld)
                acc_s[k] += (lo, max(uu[k], ud[k], lo))
            for k, eta in enumerate(etas):
                low, up = two_stage_bp_bounds(x, score, chi, float(eta))
                acc_b[k] += (low.bp, up.bp)
        for k, m in enumerate(ms):
            rows.append((model, "sensitivity", int(m), float(m), *(acc_s[k] / reps)))
        for k, eta in enumerate(etas):
            rows.append((model, "breakdown", int(n), float(eta), *(acc_b[k] / reps)))
    return StudyResult(rows, ("model", "quantity", "m_or_n", "x", "lower_mean", "upper_mean"))


def sensitivity_draws(model: PopulationModel, score: ScoreFamily, n: int, eps: float,
                      reps: int, seed: int, side: str = "plus", chunk: int = 250) -> np.ndarray:
    """Monte Carlo draws of ``sqrt(n) (eta_hat_{m/n} - eta_eps)`` with ``m = ceil(eps n)``."""
    m = math.ceil(eps * n)
    target = population_sensitivity(model, score, eps, side)
    out = []
    rng = stream(seed, 0)
    for start in range(0, reps, chunk):
        k = min(chunk, reps - start)
        X = np.sort(model.sample(rng, (k, n)), axis=1)
        theta = location_roots(score, X, side="mid")
        W = np.ones_like(X)
        if side == "plus":
            W[:, :m] = 0.0
            root = location_roots(score, X, W, np.full(k, m * score.psi_pos_inf), "high")
            est = root - theta
        else:
            W[:, n - m:] = 0.0
            root = location_roots(score, X, W, np.full(k, m * score.psi_neg_inf), "low")
            est = theta - root
        out.append(math.sqrt(n) * (np.maximum(est, 0.0) - target))
    return np.concatenate(out)


def normality_study(n: int = 2000, eps: float = 0.1, reps: int = 2000, seeds=range(10),
                    loss: str = "huber", side: str = "plus") -> StudyResult:
    """Monte Carlo variance and KS check of the sensitivity against its normal limit."""
    model = PopulationModel.normal()
    score = ScoreFamily.from_name(loss)
    V = asymptotic_variance_sensitivity(model, score, eps, side)
    rows = []
    for s in seeds:
        d = sensitivity_draws(model, score, n, eps, reps, s, side)
        ks = stats.kstest(d / math.sqrt(V), "norm")
        rows.append((int(s), float(np.mean(d)), float(np.var(d, ddof=1)), float(ks.statistic),
                     float(ks.pvalue)))
    return StudyResult(rows, ("seed", "mean", "variance", "ks_stat", "ks_p"),
                       {"V": V, "eps": eps, "n": n})


def pit_study(n: int = 100, M: int = 200, B: int = 200, epsilons=(0.03, 0.1, 0.15),
              seeds=range(1), loss: str = "huber", threads: int = 1) -> StudyResult:
    score = ScoreFamily.from_name(loss)
    model = PopulationModel.normal()
    rows, U = [], {}
    for e in epsilons:
        for s in seeds:
            res = pit_uniformity(model, score, e, n, M, B,
                                 BootstrapConfig(B=B, seed=int(s), threads=threads))
            rows.append((float(e), int(s), res.ks_stat, res.p_value))
            U[(float(e), int(s))] = res.U
    return StudyResult(rows, ("eps", "seed", "ks_stat", "ks_p"), {"U": U})


# ------------------------------------------------------------------ presets

PRESETS = {
    "desk": {
        "fig_location_curves": dict(n=1000, reps=5),
        "fig_two_stage": dict(n=200, ms=tuple(range(2, 31, 2)), reps=3),
        "fig_test_vshape": dict(n=500, reps=5),
        "fig_gap_vs_n": dict(ns=(50, 450, 1050), reps=10),
        "fig_two_sample_vshape": dict(n=50, reps=5),
        "fig_pit": dict(n=100, M=200, B=200),
    },
    "full": {
        "fig_location_curves": dict(n=1000, reps=100),
        "fig_two_stage": dict(n=1000, reps=100),
        "fig_test_vshape": dict(n=500, reps=100, thetas=tuple(np.linspace(-2, 2, 17))),
        "fig_gap_vs_n": dict(ns=tuple(range(50, 4051, 200)), reps=100),
        "fig_two_sample_vshape": dict(n=50, reps=100, thetas=tuple(np.linspace(-2, 2, 17))),
        "fig_pit": dict(n=100, M=1000, B=1000),
    },
}

_RUNNERS = {
    "fig_location_curves": location_curve_study,
    "fig_two_stage": two_stage_study,
    "fig_test_vshape": vshape_study,
    "fig_gap_vs_n": gap_study,
    "fig_two_sample_vshape": two_sample_vshape_study,
    "fig_pit": pit_study,
}


def run_experiment(experiment_id: str, preset: str = "desk", seed: int = 0,
                   threads: int = 1) -> tuple[StudyResult, dict]:
    """Run one named study; returns the result and the configuration used."""
    if experiment_id not in _RUNNERS:
        raise DomainError(f"unknown experiment {experiment_id!r}; choose from {EXPERIMENTS}")
    if preset not in PRESETS:
        raise DomainError(f"unknown preset {preset!r}")
    kwargs = dict(PRESETS[preset][experiment_id])
    if experiment_id == "fig_pit":
        kwargs.update(seeds=(seed,), threads=threads)
    else:
        kwargs["seed"] = seed
    res = _RUNNERS[experiment_id](**kwargs)
    config = {"experiment": experiment_id, "preset": preset, "seed": seed,
              **{k: (list(v) if isinstance(v, (tuple, range)) else v) for k, v in kwargs.items()
                 if k not in ("seeds", "seed", "threads")}}
    return res, config
