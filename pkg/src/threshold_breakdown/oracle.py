"""Exhaustive contamination search for small samples.

Every subset of ``m`` indices is replaced by every multiset of ``m`` values
from a finite candidate set, the statistic is re-solved on each contaminated
sample and the extreme displacement (or the first decision flip) is kept.
Rows are processed in vectorised chunks; a row budget guards against
combinatorial blow-up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, combinations_with_replacement

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BudgetError, DomainError
from .estimators import as_sample, location_roots, scale_roots, solve_location, solve_scale
from .estimators import solve_two_stage
from .sensitivity import EstimatorSpec, SchemeConfig, a_grid, location_sensitivity_arrays
from .testaudit import (
    TestSpec,
    decisions_batch,
    restricted_score_spread,
    scheme_targets,
    two_sample_decisions_batch,
    _splits,
)

CHUNK_ROWS = 20000
DEDUP_ROWS = 1_000_000


@dataclass(frozen=True)
class OracleConfig:
    """Search settings.

    ``candidate_values`` are added to the automatic candidates (infinities,
    the data points and target-specific anchors).  ``refine`` turns on a
    coordinate-wise bounded search around the best grid placement for the
    two-stage and standard-error targets.
    """

    candidate_values: tuple = ()
    refine: bool = False
    refine_tol: float = 1e-6
    max_n: int = 8
    max_rows: int = 2_000_000
    budget_mode: str = "total"


def _count_rows(n, m, c):
    return math.comb(n, m) * math.comb(c + m - 1, m)


def _rows(xs: np.ndarray, m: int, cands: np.ndarray):
    """Yield blocks of contaminated samples (kept points followed by placements).

    Samples that coincide as multisets are evaluated once; the first
    representative in enumeration order is kept.
    """
    n = xs.size
    if m == 0:
        multisets = np.zeros((1, 0))
    else:
        multisets = np.array(list(combinations_with_replacement(cands, m)), float)
    if m == n:
        kept = np.zeros((1, 0))
    else:
        kept = xs[np.array(list(combinations(range(n), n - m)), int)]
    total = kept.shape[0] * multisets.shape[0]
    q = multisets.shape[0]
    if total <= DEDUP_ROWS:
        idx = np.arange(total)
        rows = np.hstack([kept[idx // q], multisets[idx % q]])
        _, first = np.unique(np.sort(rows, axis=1), axis=0, return_index=True)
        rows = rows[np.sort(first)]
        for s in range(0, rows.shape[0], CHUNK_ROWS):
            yield rows[s:s + CHUNK_ROWS]
        return
    for s in range(0, total, CHUNK_ROWS):
        idx = np.arange(s, min(s + CHUNK_ROWS, total))
        yield np.hstack([kept[idx // q], multisets[idx % q]])


def _base_candidates(xs, extra):
    vals = [math.inf, -math.inf, *map(float, xs), *map(float, extra)]
    return vals


def _finish(cands):
    arr = np.array(sorted(set(float(c) for c in cands if not math.isnan(c))))
    if not (np.isinf(arr).any()):
        raise DomainError("candidate set must include the infinities")
    return arr


def _check_size(n, m, c, config):
    if n > config.max_n:
        raise BudgetError(f"oracle refuses n={n} > max_n={config.max_n}")
    rows = _count_rows(n, m, c)
    if rows > config.max_rows:
        raise BudgetError(f"oracle would evaluate {rows} samples (budget {config.max_rows})")


# ------------------------------------------------------------ estimators

def _target_value(spec: EstimatorSpec, Y: np.ndarray, side: str):
    """Contaminated statistic for each row; NaN marks rows to skip."""
    score = spec.score
    t = spec.target
    if t == "location":
        return location_roots(score, Y, side="high" if side == "plus" else "low")
    if t == "scale":
        return scale_roots(spec.chi, Y, side="high" if side == "plus" else "low")
    if t == "two_stage":
        sig = scale_roots(spec.chi, Y, side="mid")
        ok = (sig > 0) & np.isfinite(sig)
        s = np.where(ok, sig, 1.0)
        th = location_roots(score, Y, side="high" if side == "plus" else "low", divisor=s)
        return np.where(ok, th, np.nan)
    if t in ("se_plugin", "se_restricted"):
        if t == "se_plugin":
            th = location_roots(score, Y, side="mid")
        else:
            th = np.full(Y.shape[0], spec.theta0)
        ok = np.isfinite(th)
        with np.errstate(invalid="ignore"):
            R = Y - np.where(ok, th, 0.0)[:, None]
        R = np.where(np.isnan(R), 0.0, R)
        num = np.sum(score.psi(R) ** 2, axis=1)
        den = np.sum(score.dpsi(R), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            se = np.sqrt(num) / den
        return np.where(ok & (den > 0), se, np.nan)
    raise DomainError(f"unknown target {t!r}")


def _reference(spec: EstimatorSpec, sample):
    t = spec.target
    if t == "location":
        return solve_location(sample, spec.score).theta_hat
    if t == "scale":
        return solve_scale(sample, spec.chi).sigma_hat
    if t == "two_stage":
        return solve_two_stage(sample, spec.score, spec.chi).theta_hat
    Y = sample.sorted[None, :]
    return float(_target_value(spec, Y, "plus")[0])


def _estimator_candidates(spec: EstimatorSpec, sample, m, config):
    xs = sample.sorted
    cands = _base_candidates(xs, config.candidate_values)
    score = spec.score
    t = spec.target
    if t == "scale":
        cands.append(0.0)
    elif t == "se_restricted":
        cands.append(spec.theta0)
    elif t in ("two_stage", "se_plugin"):
        if t == "two_stage":
            f = solve_two_stage(sample, score, spec.chi)
            theta, unit = f.theta_hat, f.sigma_hat * score.delta
        else:
            theta = solve_location(sample, score).theta_hat
            unit = score.delta
        cands.append(theta)
        sch = spec.scheme or SchemeConfig()
        cands += sch.resolve(xs, "left") + sch.resolve(xs, "right")
        ag = a_grid(score)
        ag = ag[np.isfinite(ag)]
        if t == "se_plugin" and sch.use_a_grid:
            up, dn = location_sensitivity_arrays(sample, score, [m], theta)
            cands += list(theta + up[0] + ag * score.delta)
            cands += list(theta - dn[0] - ag * score.delta)
        cands += list(theta + unit * ag) + list(theta - unit * ag)
    return _finish(cands)


def _refine(spec, kept, placed, cands, side, ref, best, tol):
    """Coordinate-wise bounded search over each placement between its grid neighbours."""
    sign = 1.0 if side == "plus" else -1.0
    finite = cands[np.isfinite(cands)]
    vals = np.array(placed, float)

    def obj(v, j):
        trial = vals.copy()
        trial[j] = v
        y = np.concatenate([kept, trial])[None, :]
        out = float(_target_value(spec, y, side)[0])
        return -sign * (out - ref) if math.isfinite(out) else math.inf

    for j in range(vals.size):
        if not math.isfinite(vals[j]):
            continue
        k = int(np.searchsorted(finite, vals[j]))
        lo = finite[max(k - 1, 0)]
        hi = finite[min(k + 1, finite.size - 1)]
        if hi <= lo:
            continue
        r = minimize_scalar(lambda v: obj(v, j), bounds=(lo, hi), method="bounded",
                            options={"xatol": tol})
        if r.success and -r.fun > best:
            best = -r.fun
            vals[j] = r.x
    return best


def brute_force_sensitivity(sample, spec: EstimatorSpec, m: int, side: str = "plus",
                            config: OracleConfig | None = None) -> float:
    """Largest displacement of the re-solved statistic over all ``m``-replacements.

    ``side`` is ``"plus"`` (increase) or ``"minus"`` (decrease).  For the
    location and scale targets the extremal root is used, matching the
    sensitivity definitions; rows whose statistic is undefined are skipped.
    """
    config = config or OracleConfig()
    if side not in ("plus", "minus"):
        raise DomainError("side must be 'plus' or 'minus'")
    sample = as_sample(sample)
    n = sample.n
    if not 0 <= m <= n:
        raise DomainError(f"m must lie in [0, {n}]")
    if m == 0:
        return 0.0
    cands = _estimator_candidates(spec, sample, m, config)
    _check_size(n, m, cands.size, config)
    ref = _reference(spec, sample)
    sign = 1.0 if side == "plus" else -1.0
    best, best_row = -math.inf, None
    for block in _rows(sample.sorted, m, cands):
        v = sign * (_target_value(spec, block, side) - ref)
        v = np.where(np.isnan(v), -math.inf, v)
        j = int(np.argmax(v))
        if v[j] > best:
            best, best_row = float(v[j]), block[j].copy()
    if config.refine and spec.target in ("two_stage", "se_plugin") and best_row is not None \
            and math.isfinite(best):
        best = _refine(spec, best_row[: n - m], best_row[n - m:], cands, side, ref, best,
                       config.refine_tol)
    return max(best, 0.0)


def brute_force_bp(sample, spec: EstimatorSpec, eta: float, side: str = "plus",
                   config: OracleConfig | None = None):
    """Smallest ``m`` whose brute-force sensitivity reaches ``eta`` (``None`` if none)."""
    sample = as_sample(sample)
    for m in range(1, sample.n + 1):
        if brute_force_sensitivity(sample, spec, m, side, config) >= eta:
            return m
    return None


# ----------------------------------------------------------------- tests

def _test_candidates(xs, score, spec: TestSpec, m, center, config):
    cands = _base_candidates(xs, config.candidate_values) + [0.0, center]
    right, left = scheme_targets(xs, score, spec, m, center)
    return _finish(cands + right + left)


@dataclass(frozen=True)
class OracleTestResult:
    m: int | None
    n_norm: int
    cap: int
    witness: object = None

    @property
    def bp(self) -> float:
        return math.inf if self.m is None else self.m / self.n_norm


def brute_force_test_bp(sample_or_pair, score, spec: TestSpec,
                        config: OracleConfig | None = None) -> OracleTestResult:
    """Smallest number of replacements (up to the cap) flipping the test decision."""
    config = config or OracleConfig()
    if spec.kind == "two_sample_wald":
        return _two_sample_oracle(sample_or_pair, score, spec, config)
    xs = as_sample(sample_or_pair).sorted - spec.theta0
    n = xs.size
    cap = -(-n // 2)
    spread = restricted_score_spread(score, spec.sigma0) if spec.kind == "restricted_score" else None
    d0, _, _, c0, _ = decisions_batch(xs[None], score, spec, spread)
    d0, center = int(d0[0]), float(c0[0])
    for m in range(1, cap + 1):
        cands = _test_candidates(xs, score, spec, m, center, config)
        _check_size(n, m, cands.size, config)
        for block in _rows(xs, m, cands):
            d = decisions_batch(block, score, spec, spread)[0]
            hit = np.flatnonzero(d != d0)
            if hit.size:
                return OracleTestResult(m, n, cap, np.sort(block[hit[0]]))
    return OracleTestResult(None, n, cap)


def _two_sample_oracle(pair, score, spec, config):
    x, y = pair
    xs = as_sample(x).sorted - spec.theta0
    ys = as_sample(y).sorted
    nx, ny = xs.size, ys.size
    n_star = min(nx, ny)
    cap = -(-n_star // 2)
    d0 = int(two_sample_decisions_batch(xs[None], ys[None], score, spec)[0][0])
    budget = config.budget_mode if spec.budget == "total" else spec.budget
    cx = _finish(_base_candidates(xs, config.candidate_values) + list(ys))
    cy = _finish(_base_candidates(ys, config.candidate_values) + list(xs))
    for m in range(1, cap + 1):
        total = 0
        for k1, k2 in _splits(m, nx, ny, budget):
            total += _count_rows(nx, k1, cx.size) * _count_rows(ny, k2, cy.size)
        if max(nx, ny) > config.max_n or total > config.max_rows:
            raise BudgetError(f"two-sample oracle would evaluate {total} pairs")
        for k1, k2 in _splits(m, nx, ny, budget):
            bx = np.vstack(list(_rows(xs, k1, cx)))
            by = np.vstack(list(_rows(ys, k2, cy)))
            ix, iy = np.meshgrid(np.arange(bx.shape[0]), np.arange(by.shape[0]), indexing="ij")
            ix, iy = ix.ravel(), iy.ravel()
            for s in range(0, ix.size, CHUNK_ROWS):
                a, b = bx[ix[s:s + CHUNK_ROWS]], by[iy[s:s + CHUNK_ROWS]]
                d = two_sample_decisions_batch(a, b, score, spec)[0]
                hit = np.flatnonzero(d != d0)
                if hit.size:
                    h = hit[0]
                    return OracleTestResult(m, n_star, cap, (np.sort(a[h]), np.sort(b[h])))
    return OracleTestResult(None, n_star, cap)


def brute_force_statistic_extreme(x, y, score, m: int, spec: TestSpec | None = None,
                                  direction: str = "up", config: OracleConfig | None = None):
    """Largest (``"up"``) or smallest standardised contrast over ``m`` joint replacements."""
    spec = spec or TestSpec("two_sample_wald")
    config = config or OracleConfig()
    xs = as_sample(x).sorted - spec.theta0
    ys = as_sample(y).sorted
    cx = _finish(_base_candidates(xs, config.candidate_values) + list(ys))
    cy = _finish(_base_candidates(ys, config.candidate_values) + list(xs))
    sign = 1.0 if direction == "up" else -1.0
    best = -math.inf
    for k1, k2 in _splits(m, xs.size, ys.size, spec.budget):
        bx = np.vstack(list(_rows(xs, k1, cx)))
        by = np.vstack(list(_rows(ys, k2, cy)))
        ix, iy = np.meshgrid(np.arange(bx.shape[0]), np.arange(by.shape[0]), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        for s in range(0, ix.size, CHUNK_ROWS):
            _, _, _, c, sp = two_sample_decisions_batch(bx[ix[s:s + CHUNK_ROWS]],
                                                        by[iy[s:s + CHUNK_ROWS]], score, spec)
            with np.errstate(invalid="ignore", divide="ignore"):
                T = sign * c / sp
            T = np.where(np.isnan(T), -math.inf, T)
            best = max(best, float(T.max()))
    return sign * best
