"""Multiplier bootstrap for m-sensitivities and threshold breakdown points.

Each replicate reweights the observations by i.i.d. nonnegative multipliers
(unit exponential by default), re-solves the weighted location equation and
recomputes the statistic on the weighted empirical distribution.  Weight
streams are keyed by ``(seed, replicate_index)`` so results do not depend on
chunking or thread count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .distributions import PopulationModel
from .errors import DomainError, NumericError
from .estimators import as_sample, location_roots, snap
from .score import ScoreFamily

WEIGHT_LAWS = ("exponential_unit", "custom")
MAX_FAILURE_RATE = 0.01
CHUNK_CELLS = 100_000
PIT_CELLS = 120000
PILOT_DRAWS = 200_000
MOMENT_TOL = 0.05


@dataclass(frozen=True)
class BootstrapConfig:
    """Replicate count, multiplier law, seed and confidence levels.

    ``custom_law`` is a callable ``(rng, n) -> weights`` used when
    ``weight_law="custom"``.  Laws whose mean or variance is not 1 are
    accepted but reported by :meth:`moment_flags`.
    """

    B: int = 1000
    weight_law: str = "exponential_unit"
    seed: int = 0
    ci_levels: tuple = (0.8, 0.95)
    method: str = "basic"
    custom_law: Callable | None = None
    threads: int = 1

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 1:
            raise DomainError("B must be a positive integer")
        if self.weight_law not in WEIGHT_LAWS:
            raise DomainError(f"weight_law must be one of {WEIGHT_LAWS}")
        if self.weight_law == "custom" and self.custom_law is None:
            raise DomainError("custom weight law needs custom_law")
        if self.method not in ("basic", "percentile"):
            raise DomainError("method must be 'basic' or 'percentile'")
        if not all(0 < c < 1 for c in self.ci_levels):
            raise DomainError("ci_levels must lie in (0, 1)")
        if self.threads < 1:
            raise DomainError("threads must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit nonnegative integer")

    def raw_weights(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.weight_law == "exponential_unit":
            return rng.standard_exponential(n)
        return np.asarray(self.custom_law(rng, n), dtype=float)

    def moment_flags(self) -> list[str]:
        """Departures of the multiplier law from mean 1 and variance 1."""
        if self.weight_law == "exponential_unit":
            return []
        w = self.raw_weights(np.random.default_rng(12345), PILOT_DRAWS)
        flags = []
        if np.any(w < 0):
            flags.append("negative multipliers")
        if abs(w.mean() - 1.0) > MOMENT_TOL:
            flags.append(f"mean {w.mean():.4g} differs from 1")
        if abs(w.var() - 1.0) > MOMENT_TOL:
            flags.append(f"variance {w.var():.4g} differs from 1")
        return flags


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def draw_weights(n: int, config: BootstrapConfig, replicate_index: int,
                 stream: int = 0) -> np.ndarray:
    """Normalized multipliers ``W_i / sum W`` for one replicate."""
    if n < 1:
        raise DomainError("n must be positive")
    w = config.raw_weights(_rng(config.seed, stream, replicate_index), n)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("multipliers must be n finite nonnegative values")
    total = w.sum()
    if total <= 0:
        return np.full(n, math.nan)
    return w / total


@dataclass(frozen=True)
class BootstrapSummary:
    point: float
    draws: np.ndarray
    ci: dict
    method: str
    B: int
    seed: int
    failures: int = 0
    statistic: str = ""
    flags: tuple = field(default=())

    def centered(self, n: int) -> np.ndarray:
        """``sqrt(n) (draw - point)`` for every kept replicate."""
        return math.sqrt(n) * (self.draws - self.point)

    def as_dict(self) -> dict:
        return {"statistic": self.statistic, "point": self.point, "B": self.B, "seed": self.seed,
                "failures": self.failures, "method": self.method,
                "ci": {f"{k:g}": list(v) for k, v in self.ci.items()},
                "flags": list(self.flags)}


# ------------------------------------------------------------ batch kernels

def _kept_plus(W, t):
    """Weight left on each (sorted) point after removing mass ``t`` from the bottom."""
    cw = np.cumsum(W, axis=1)
    return np.minimum(W, np.maximum(cw - t, 0.0))


def _kept_minus(W, t):
    cw = np.cumsum(W, axis=1)
    prev = cw - W
    return np.minimum(W, np.maximum((1.0 - t) - prev, 0.0))


def weighted_theta_batch(xs: np.ndarray, W: np.ndarray, score: ScoreFamily) -> np.ndarray:
    """Weighted location estimates, one per row of ``W`` (columns follow sorted ``xs``)."""
    return location_roots(score, np.broadcast_to(xs, W.shape), W, side="mid")


def weighted_sensitivity_batch(xs, W, score: ScoreFamily, m: int, side: str,
                               theta=None) -> np.ndarray:
    """Weighted m-sensitivities for each row of ``W``.

    Rows of ``xs`` (or the single row) must be sorted and aligned with ``W``.
    """
    X = np.broadcast_to(xs, W.shape)
    if theta is None:
        theta = location_roots(score, X, W, side="mid")
    n = W.shape[1]
    t = m / n
    if m == 0:
        return np.zeros(W.shape[0])
    with np.errstate(invalid="ignore"):
        if side == "plus":
            root = location_roots(score, X, _kept_plus(W, t),
                                  np.full(W.shape[0], t * score.psi_pos_inf), "high")
            return np.maximum(root - theta, 0.0)
        if side == "minus":
            root = location_roots(score, X, _kept_minus(W, t),
                                  np.full(W.shape[0], t * score.psi_neg_inf), "low")
            return np.maximum(theta - root, 0.0)
    up = weighted_sensitivity_batch(xs, W, score, m, "plus", theta)
    dn = weighted_sensitivity_batch(xs, W, score, m, "minus", theta)
    return np.maximum(up, dn)


def _bp_one(x, w, theta, score, eta, side, n):
    """Smallest grid index ``m`` at which the weighted shift reaches ``eta``."""
    ms = np.arange(1, -(-n // 2) + 1)
    t = ms / n
    cw = np.cumsum(w)
    hits = []
    if side in ("plus", "two_sided"):
        v = score.psi(x - (theta + eta))
        wv = w * v
        tail = np.concatenate([np.cumsum(wv[::-1])[::-1], [0.0]])  # tail[k] = sum_{i>=k}
        mag = np.concatenate([np.cumsum(np.abs(wv[::-1]))[::-1], [0.0]])
        k = np.minimum(np.searchsorted(cw, t, side="left"), n - 1)
        part = (cw[k] - t) * v[k]
        c = t * score.psi_pos_inf
        s = snap(part + tail[k + 1] + c, np.abs(part) + mag[k + 1] + np.abs(c))
        ok = np.flatnonzero(s >= 0)
        hits.append(ms[ok[0]] if ok.size else None)
    if side in ("minus", "two_sided"):
        v = score.psi(x - (theta - eta))
        wv = w * v
        head = np.concatenate([[0.0], np.cumsum(wv)])  # head[k] = sum_{i<k}
        mag = np.concatenate([[0.0], np.cumsum(np.abs(wv))])
        prev = np.concatenate([[0.0], cw[:-1]])
        j = np.minimum(np.searchsorted(cw, 1.0 - t, side="left"), n - 1)
        part = ((1.0 - t) - prev[j]) * v[j]
        c = t * score.psi_neg_inf
        s = snap(head[j] + part + c, mag[j] + np.abs(part) + np.abs(c))
        ok = np.flatnonzero(s <= 0)
        hits.append(ms[ok[0]] if ok.size else None)
    found = [h for h in hits if h is not None]
    return min(found) / n if found else math.inf


def weighted_bp_batch(xs, W, score: ScoreFamily, eta: float, side: str, theta=None) -> np.ndarray:
    """Weighted threshold breakdown points on the grid ``{1/n, ..., ceil(n/2)/n}``."""
    X = np.broadcast_to(xs, W.shape)
    if theta is None:
        theta = location_roots(score, X, W, side="mid")
    n = W.shape[1]
    return np.array([_bp_one(X[r], W[r], theta[r], score, eta, side, n)
                     for r in range(W.shape[0])])


# --------------------------------------------------------------- replicates

def _chunks(B: int, n: int):
    size = max(1, CHUNK_CELLS // max(n, 1))
    return [(s, min(B, s + size)) for s in range(0, B, size)]


def _weights_block(n, config, lo, hi, stream):
    return np.stack([draw_weights(n, config, b, stream) for b in range(lo, hi)])


def _run_replicates(n, config, kernel, stream=0):
    spans = _chunks(config.B, n)

    def job(span):
        W = _weights_block(n, config, span[0], span[1], stream)
        bad = ~np.all(np.isfinite(W), axis=1)
        W = np.where(bad[:, None], 1.0 / n, W)
        out = np.asarray(kernel(W), dtype=float)
        out[bad] = math.nan
        return out

    if config.threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            parts = list(pool.map(job, spans))
    else:
        parts = [job(s) for s in spans]
    return np.concatenate(parts)


def _quantiles(draws, probs):
    method = "linear" if np.all(np.isfinite(draws)) else "inverted_cdf"
    return np.quantile(draws, probs, method=method)


def confidence_intervals(point: float, draws: np.ndarray, levels: Sequence[float],
                         method: str = "basic") -> dict:
    """Basic (reflected) or percentile intervals from bootstrap draws."""
    draws = np.sort(np.asarray(draws, float))
    out = {}
    for level in levels:
        a = 1.0 - level
        q_lo, q_hi = _quantiles(draws, [a / 2, 1 - a / 2])
        if method == "basic":
            with np.errstate(invalid="ignore"):
                lo, hi = 2 * point - q_hi, 2 * point - q_lo
        else:
            lo, hi = q_lo, q_hi
        out[float(level)] = (float(lo), float(hi))
    return out


def _summarize(point, raw, config, statistic):
    failed = np.isnan(raw)
    failures = int(failed.sum())
    if failures > MAX_FAILURE_RATE * config.B:
        raise NumericError(f"{failures} of {config.B} bootstrap replicates failed")
    draws = raw[~failed]
    flags = tuple(config.moment_flags())
    for f in flags:
        warnings.warn(f"multiplier law violates the unit-moment condition: {f}", stacklevel=3)
    ci = confidence_intervals(point, draws, config.ci_levels, config.method)
    return BootstrapSummary(float(point), draws, ci, config.method, config.B, config.seed,
                            failures, statistic, flags)


def _check_side(side):
    if side not in ("plus", "minus", "two_sided"):
        raise DomainError("side must be 'plus', 'minus' or 'two_sided'")


def bootstrap_sensitivity(sample, score: ScoreFamily, m: int, side: str = "plus",
                          config: BootstrapConfig | None = None) -> BootstrapSummary:
    """Multiplier-bootstrap draws and intervals for the m-sensitivity."""
    config = config or BootstrapConfig()
    _check_side(side)
    sample = as_sample(sample)
    xs, n = sample.sorted, sample.n
    if not 0 <= m <= n // 2:
        raise DomainError("m must lie in [0, n/2]")
    uniform = np.full((1, n), 1.0 / n)
    point = float(weighted_sensitivity_batch(xs, uniform, score, m, side)[0])
    raw = _run_replicates(n, config, lambda W: weighted_sensitivity_batch(xs, W, score, m, side))
    return _summarize(point, raw, config, f"eta_{side}(m={m})")


def bootstrap_bp(sample, score: ScoreFamily, eta: float, side: str = "plus",
                 config: BootstrapConfig | None = None) -> BootstrapSummary:
    """Multiplier-bootstrap draws and intervals for the threshold breakdown point."""
    config = config or BootstrapConfig()
    _check_side(side)
    if not eta > 0:
        raise DomainError("eta must be positive")
    sample = as_sample(sample)
    xs, n = sample.sorted, sample.n
    uniform = np.full((1, n), 1.0 / n)
    point = float(weighted_bp_batch(xs, uniform, score, eta, side)[0])
    raw = _run_replicates(n, config, lambda W: weighted_bp_batch(xs, W, score, eta, side))
    return _summarize(point, raw, config, f"bp_{side}(eta={eta:g})")


# ---------------------------------------------------------------------- PIT

@dataclass(frozen=True)
class PitResult:
    ks_stat: float
    p_value: float
    U: np.ndarray
    eps: float
    m: int
    n: int
    eta_target: float

    def __iter__(self):
        return iter((self.ks_stat, self.p_value, self.U))


def randomized_pit(t: float, draws: np.ndarray, v: float) -> float:
    """``(#{draws <= t} + v) / (len(draws) + 1)``."""
    draws = np.asarray(draws, float)
    return (float(np.sum(draws <= t)) + v) / (draws.size + 1)


def pit_uniformity(model: PopulationModel, score: ScoreFamily, eps: float, n: int = 100,
                   M: int = 1000, B: int = 1000, config: BootstrapConfig | None = None,
                   side: str = "plus") -> PitResult:
    """Randomized PIT of the sampling statistic against its bootstrap law.

    For each of ``M`` samples, ``T = sqrt(n) (eta_hat - eta_eps)`` is ranked
    among ``B`` draws of ``sqrt(n) (eta_tilde - eta_hat)``.  Uniform ranks
    mean the bootstrap reproduces the sampling distribution.
    """
    from .asymptotics import population_sensitivity

    config = config or BootstrapConfig(B=B)
    if side not in ("plus", "minus"):
        raise DomainError("PIT needs a one-sided statistic")
    m = math.ceil(eps * n)
    target = population_sensitivity(model, score, eps, side)
    inner = BootstrapConfig(B=B, weight_law=config.weight_law, seed=config.seed,
                            custom_law=config.custom_law, threads=1)
    root = math.sqrt(n)

    def group(js):
        # Each outer sample contributes one point row plus B weighted rows;
        # stacking several samples into one batch amortizes the root solver.
        xs_rows, w_rows, vs = [], [], []
        for j in js:
            rng = _rng(config.seed, 1, j)
            xs = np.sort(model.sample(rng, n))
            vs.append(rng.random())
            W = _weights_block(n, inner, 0, B, 2 + j)
            xs_rows.append(np.broadcast_to(xs, (B + 1, n)))
            w_rows.append(np.vstack([np.full((1, n), 1.0 / n), W]))
        X = np.vstack(xs_rows)
        Wall = np.vstack(w_rows)
        bad = ~np.all(np.isfinite(Wall), axis=1)
        Wall = np.where(bad[:, None], 1.0 / n, Wall)
        vals = weighted_sensitivity_batch(X, Wall, score, m, side)
        vals[bad] = math.nan
        out = []
        for k, v in enumerate(vs):
            block = vals[k * (B + 1):(k + 1) * (B + 1)]
            point, draws = block[0], block[1:]
            draws = draws[~np.isnan(draws)]
            out.append(randomized_pit(root * (point - target), root * (draws - point), v))
        return out

    size = max(1, PIT_CELLS // ((B + 1) * n))
    groups = [range(s, min(M, s + size)) for s in range(0, M, size)]
    if config.threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            parts = list(pool.map(group, groups))
    else:
        parts = [group(g) for g in groups]
    U = np.concatenate([np.asarray(p, float) for p in parts])
    res = stats.kstest(U, "uniform")
    return PitResult(float(res.statistic), float(res.pvalue), U, float(eps), m, n, target)
