"""Breakdown audits for Wald-type, score and two-sample tests.

A test rejects when zero lies outside ``[L, U] = center -/+ z * spread``.
Each audit brackets the smallest number of replaced observations that flips
the decision.  The lower end combines sensitivity bounds of the centre and
the spread; the upper end is the first ``m`` at which an explicit
contamination actually flips the re-run test.  When the spread is fixed and
the centre's sensitivity is exact, the two ends coincide.

Conventions
-----------
* The null value is handled by shifting the data, so every test is run at 0.
* A contaminated estimate at +/-infinity counts as a rejection.
* Searches stop at ``ceil(n/2)`` replacements (``ceil(n_star/2)`` for two
  samples); ``None`` means no flip up to that cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .distributions import PopulationModel
from .errors import DegenerateError, DomainError
from .estimators import (
    as_sample,
    location_roots,
    scale_roots,
    solve_two_stage,
)
from .score import ScaleScoreFamily, ScoreFamily
from .sensitivity import (
    SchemeConfig,
    SensitivityPoint,
    a_grid,
    band_count_ranges,
    curvature_gap,
    location_sensitivity_arrays,
    replace_extremes,
    scale_sensitivity_arrays,
    se_plugin_upper_arrays,
    se_restricted_arrays,
    two_stage_upper_arrays,
    _count_s_minus,
    _count_s_plus,
)

ONE_SAMPLE_KINDS = ("wald", "restricted_wald", "fixed_sigma_wald", "score", "restricted_score")
KINDS = ONE_SAMPLE_KINDS + ("two_sample_wald",)
SIDED = ("two_sided", "one_sided_upper", "one_sided_lower")
EXACT_KINDS = ("fixed_sigma_wald", "restricted_score")
FAR_FACTOR = 1e6

_KIND_ALIASES = {
    "wald": "wald", "rwald": "restricted_wald", "restricted_wald": "restricted_wald",
    "score": "score", "rscore": "restricted_score", "restricted_score": "restricted_score",
    "fixed": "fixed_sigma_wald", "fixed_sigma_wald": "fixed_sigma_wald",
    "two-sample": "two_sample_wald", "two_sample": "two_sample_wald",
    "two_sample_wald": "two_sample_wald",
}


@dataclass(frozen=True)
class TestSpec:
    """Test configuration.

    ``sigma0`` is the fixed standard error for ``fixed_sigma_wald`` and the
    null standard deviation of the data for ``restricted_score`` (default 1).
    ``budget`` applies to two-sample audits: ``"total"`` splits ``m`` across
    the samples, ``"per_sample"`` allows ``m`` in each.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str = "wald"
    alpha: float = 0.05
    theta0: float = 0.0
    sided: str = "two_sided"
    sigma0: float | None = None
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    budget: str = "total"

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise DomainError(f"unknown test kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if self.sided not in SIDED:
            raise DomainError(f"unknown sidedness {self.sided!r}")
        if kind == "fixed_sigma_wald" and not (self.sigma0 and self.sigma0 > 0):
            raise DomainError("fixed_sigma_wald needs a positive sigma0")
        if self.budget not in ("total", "per_sample"):
            raise DomainError(f"unknown budget mode {self.budget!r}")

    @property
    def z(self) -> float:
        return z_value(self.alpha, self.sided)

    @property
    def exact(self) -> bool:
        return self.kind in EXACT_KINDS


def z_value(alpha: float, sided: str = "two_sided") -> float:
    q = 1 - alpha / 2 if sided == "two_sided" else 1 - alpha
    return float(stats.norm.ppf(q))


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    decision: int
    lower: float
    upper: float
    center: float
    spread: float

    @property
    def degenerate(self) -> bool:
        """True when the spread is not a finite positive number."""
        return not (math.isfinite(self.spread) and self.spread > 0)


@dataclass(frozen=True)
class Bracket:
    """Bracket ``[lower, upper]`` on a number of replacements; ``None`` = beyond cap."""

    lower: int | None
    upper: int | None
    n_norm: int
    cap: int
    exact: bool = False

    @staticmethod
    def _frac(m, n):
        return math.inf if m is None else m / n

    @property
    def lower_bp(self) -> float:
        return self._frac(self.lower, self.n_norm)

    @property
    def upper_bp(self) -> float:
        return self._frac(self.upper, self.n_norm)

    @property
    def width(self) -> float:
        lo = math.inf if self.lower is None else self.lower
        up = math.inf if self.upper is None else self.upper
        return 0.0 if lo == up else up - lo

    def contains(self, m: int | None) -> bool:
        v = math.inf if m is None else m
        lo = math.inf if self.lower is None else self.lower
        up = math.inf if self.upper is None else self.upper
        return lo <= v <= up


@dataclass
class TestAudit:
    __test__ = False

    spec: TestSpec
    result: TestResult
    reject_bp: Bracket | None = None
    accept_bp: Bracket | None = None
    witness: np.ndarray | tuple | None = None

    @property
    def decision(self) -> int:
        return self.result.decision

    @property
    def bracket(self) -> Bracket:
        return self.reject_bp if self.decision == 1 else self.accept_bp


# ------------------------------------------------------------ batch running

def _mid_location(score, Y):
    return location_roots(score, Y, side="mid")


def _se_rows(score, Y, theta):
    with np.errstate(invalid="ignore"):
        R = Y - theta[:, None]
    R = np.where(np.isnan(R), 0.0, R)
    num = np.sum(score.psi(R) ** 2, axis=1)
    den = np.sum(score.dpsi(R), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, np.sqrt(num) / den, math.inf)


def restricted_score_spread(score: ScoreFamily, sigma0: float | None) -> float:
    """``sqrt(E psi(X)^2)`` for ``X ~ N(0, sigma0^2)``."""
    model = PopulationModel.normal(0.0, sigma0 or 1.0)
    pts = (-score.delta, score.delta) if score.kind == "huber" else ()
    return math.sqrt(model.expect(lambda t: float(score.psi(t)) ** 2, points=pts))


def _interval_decision(center, spread, z, sided):
    center = np.asarray(center, float)
    spread = np.asarray(spread, float)
    with np.errstate(invalid="ignore"):
        lo = center - z * spread
        hi = center + z * spread
    if sided == "one_sided_upper":
        hi = np.full_like(hi, math.inf)
    elif sided == "one_sided_lower":
        lo = np.full_like(lo, -math.inf)
    with np.errstate(invalid="ignore"):
        dec = (lo > 0) | (hi < 0) | ~np.isfinite(center)
    return dec.astype(int), lo, hi


def decisions_batch(Y, score: ScoreFamily, spec: TestSpec, spread_fixed=None):
    """Decisions for a batch of one-sample datasets (rows, already centred at the null)."""
    Y = np.atleast_2d(np.asarray(Y, float))
    n = Y.shape[1]
    z = spec.z
    k = spec.kind
    if k in ("score", "restricted_score"):
        P = score.psi(Y)
        center = P.sum(axis=1) / math.sqrt(n)
        if k == "score":
            spread = np.sqrt(np.sum(P ** 2, axis=1) / n)
        else:
            s = spread_fixed if spread_fixed is not None else restricted_score_spread(score, spec.sigma0)
            spread = np.full(Y.shape[0], s)
    else:
        center = _mid_location(score, Y)
        if k == "wald":
            spread = _se_rows(score, Y, center)
        elif k == "restricted_wald":
            spread = _se_rows(score, Y, np.zeros(Y.shape[0]))
        else:
            spread = np.full(Y.shape[0], float(spec.sigma0))
    dec, lo, hi = _interval_decision(center, spread, z, spec.sided)
    return dec, lo, hi, center, spread


def two_sample_decisions_batch(YX, YY, score: ScoreFamily, spec: TestSpec):
    """Decisions for batches of sample pairs; the contrast is ``theta_x - theta_y``."""
    YX = np.atleast_2d(np.asarray(YX, float))
    YY = np.atleast_2d(np.asarray(YY, float))
    tx = _mid_location(score, YX)
    ty = _mid_location(score, YY)
    with np.errstate(invalid="ignore"):
        center = tx - ty
    center = np.where(np.isnan(center), math.inf, center)
    sx = _se_rows(score, YX, np.where(np.isfinite(tx), tx, 0.0))
    sy = _se_rows(score, YY, np.where(np.isfinite(ty), ty, 0.0))
    spread = np.sqrt(sx ** 2 + sy ** 2)
    dec, lo, hi = _interval_decision(center, spread, spec.z, spec.sided)
    return dec, lo, hi, center, spread


def _centered(sample, spec):
    return as_sample(sample).sorted - spec.theta0


def run_test(sample_or_pair, score: ScoreFamily, spec: TestSpec) -> TestResult:
    """Run the test and return its decision and acceptance interval ``[L, U]``."""
    if spec.kind == "two_sample_wald":
        x, y = sample_or_pair
        xs = as_sample(x).sorted - spec.theta0
        ys = as_sample(y).sorted
        d, lo, hi, c, s = two_sample_decisions_batch(xs[None], ys[None], score, spec)
    else:
        d, lo, hi, c, s = decisions_batch(_centered(sample_or_pair, spec)[None], score, spec)
    return TestResult(int(d[0]), float(lo[0]), float(hi[0]), float(c[0]), float(s[0]))


# -------------------------------------------------- one-sample sensitivities

def score_statistic_sensitivities(xs: np.ndarray, score: ScoreFamily, ms):
    """Exact sensitivities of ``V = n^{-1/2} sum psi(x)`` and ``S = sqrt(mean psi^2)``.

    Returns ``(v_plus, v_minus, s_plus, s_minus)`` over ``ms`` for data
    already centred at the null.
    """
    xs = np.sort(np.asarray(xs, float))
    n = xs.size
    ms = np.asarray(ms, int)
    p = score.psi(xs)
    rn = math.sqrt(n)
    V = p.sum() / rn
    tail = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
    head = np.concatenate([[0.0], np.cumsum(p)])
    with np.errstate(invalid="ignore"):
        v_up = (tail[ms] + np.where(ms > 0, ms * score.psi_pos_inf, 0.0)) / rn - V
        v_dn = V - (head[n - ms] + np.where(ms > 0, ms * score.psi_neg_inf, 0.0)) / rn
    p2 = np.sort(p ** 2)
    S = math.sqrt(p2.sum() / n)
    t2 = np.concatenate([np.cumsum(p2[::-1])[::-1], [0.0]])
    h2 = np.concatenate([[0.0], np.cumsum(p2)])
    s_up = np.sqrt((ms * score.psi_max ** 2 + t2[ms]) / n) - S
    s_dn = S - np.sqrt(h2[n - ms] / n)
    z = ms == 0
    return (np.where(z, 0.0, v_up), np.where(z, 0.0, v_dn),
            np.where(z, 0.0, np.maximum(s_up, 0.0)), np.where(z, 0.0, np.maximum(s_dn, 0.0)))


def _one_sample_arrays(xs, score, spec, ms, res: TestResult):
    """Sensitivity arrays of the centre and spread for each ``m`` in ``ms``."""
    k = spec.kind
    if k in ("score", "restricted_score"):
        vu, vd, su, sd = score_statistic_sensitivities(xs, score, ms)
        if k == "restricted_score":
            su = sd = np.zeros(ms.size)
        return vu, vd, su, sd
    cu, cd = location_sensitivity_arrays(xs, score, ms, res.center)
    if k == "wald":
        su, sd, _ = se_plugin_upper_arrays(xs, score, ms, res.center, cu, cd)
    elif k == "restricted_wald":
        su, sd, _ = se_restricted_arrays(xs, score, 0.0, ms)
    else:
        su = sd = np.zeros(ms.size)
    return cu, cd, su, sd


def _lower_m(res: TestResult, z, ms, cu, cd, su, sd, exact: bool):
    """First ``m`` meeting the necessary flip condition of the meta bound."""
    L, U = res.lower, res.upper
    with np.errstate(invalid="ignore"):
        if res.decision == 1:
            if L > 0:
                ok = cd + z * su >= L
            else:
                ok = cu + z * su >= -U
        else:
            cmp = np.greater if exact else np.greater_equal
            ok = np.zeros(ms.size, bool)
            if np.isfinite(U):
                ok |= cmp(cd + z * sd, U)
            if np.isfinite(L):
                ok |= cmp(cu + z * sd, -L)
    hit = np.flatnonzero(ok)
    return int(ms[hit[0]]) if hit.size else None


def psi_inverse(score: ScoreFamily, level: float) -> float:
    """A point ``u`` with ``psi(u) = level``; infinite at or beyond the score's range."""
    if level >= score.psi_pos_inf:
        return math.inf
    if level <= score.psi_neg_inf:
        return -math.inf
    if level == 0 or score.kind == "sign":
        return 0.0
    f = lambda u: float(score.psi(u)) - level
    lo, hi = -1.0, 1.0
    while f(lo) > 0:
        lo *= 2.0
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, lo, hi, xtol=1e-14, rtol=1e-15)


def _projection_targets(xs, score, spec, m, center):
    """Targets moving the contaminated statistic onto the null value, or as
    close to it as ``m`` replacements allow.

    Returns ``(push_down, push_up)``: values for the ``m`` largest and the
    ``m`` smallest observations respectively.
    """
    n = xs.size
    if m == 0 or m > n:
        return [], []
    score_kind = spec.kind in ("score", "restricted_score")
    if score_kind:
        cu, cd = score_statistic_sensitivities(xs, score, [m])[:2]
    else:
        cu, cd = location_sensitivity_arrays(xs, score, [m], center)
    cu, cd = float(cu[0]), float(cd[0])
    down, up = [], []
    for goal, reach, kept, bucket in ((max(0.0, center - cd), cd, xs[: n - m], down),
                                      (min(0.0, center + cu), cu, xs[m:], up)):
        if not math.isfinite(goal) or goal == center:
            continue
        if score_kind:
            level = (math.sqrt(n) * goal - float(np.sum(score.psi(kept)))) / m
            bucket.append(psi_inverse(score, level))
        else:
            level = -float(np.sum(score.psi(kept - goal))) / m
            t = goal + psi_inverse(score, level)
            if not math.isfinite(t) and not math.isfinite(reach):
                # the goal sits on a flat zero set; aim the midpoint instead
                t = _midpoint_target(kept, score, m, goal, bucket is down)
            bucket.append(t)
    return down, up


def _midpoint_target(kept, score, m, goal, downward, iters=64):
    """Common value ``t`` for ``m`` added points whose mid estimate is closest to ``goal``."""
    span = 1.0 + float(kept[-1] - kept[0]) + abs(goal) + score.delta
    lo, hi = (float(kept[0]) - FAR_FACTOR * span, float(kept[-1])) if downward else \
        (float(kept[0]), float(kept[-1]) + FAR_FACTOR * span)

    def est(t):
        row = np.concatenate([kept, np.full(m, t)])[None, :]
        return float(_mid_location(score, row)[0])

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if est(mid) < goal:
            lo = mid
        else:
            hi = mid
    return hi if downward else lo


def scheme_targets(xs: np.ndarray, score: ScoreFamily, spec: TestSpec, m: int,
                   center: float):
    """Target values for the push-down (right) and push-up (left) schemes.

    Besides the configured targets this adds distant finite values, which act
    like infinities below breakdown but keep the contaminated estimate finite
    at ``m = n/2``, and targets that steer the statistic onto the null value.
    """
    sch = spec.scheme
    right = sch.resolve(xs, "right")
    left = sch.resolve(xs, "left")
    far = FAR_FACTOR * (1.0 + float(xs[-1] - xs[0]) + score.delta)
    right.append(float(xs[0]) - far)
    left.append(float(xs[-1]) + far)
    down, up = _projection_targets(xs, score, spec, m, center)
    right += down
    left += up
    if spec.kind in ("score", "restricted_score"):
        right.append(0.0)
        left.append(0.0)
    if sch.use_a_grid:
        ag = a_grid(score)
        ag = ag[np.isfinite(ag)] * score.delta
        if spec.kind in ("score", "restricted_score"):
            base_r = base_l = [0.0]
        else:
            cu, cd = location_sensitivity_arrays(xs, score, [m], center)
            base_r = [center - float(cu[0]), center - float(cd[0])]
            base_l = [center + float(cu[0]), center + float(cd[0])]
        right += [b - a for b in base_r for a in ag]
        left += [b + a for b in base_l for a in ag]
    clean = lambda v: sorted({float(t) for t in v if not math.isnan(t)})
    return clean(right), clean(left)


def _flip_search(xs, score, spec, res, ms, cu, cd, spread_fixed=None, chunk=16):
    """First ``m`` whose scheme contaminations flip the decision, with a witness."""
    want_right = res.decision == 0 or res.lower > 0
    want_left = res.decision == 0 or res.upper < 0
    for start in range(0, ms.size, chunk):
        rows, tags = [], []
        for k in range(start, min(start + chunk, ms.size)):
            m = int(ms[k])
            right, left = scheme_targets(xs, score, spec, m, res.center)
            if want_right:
                for t in right:
                    rows.append(replace_extremes(xs, m, t, "high"))
                    tags.append(m)
            if want_left:
                for t in left:
                    rows.append(replace_extremes(xs, m, t, "low"))
                    tags.append(m)
        if not rows:
            continue
        d = decisions_batch(np.array(rows), score, spec, spread_fixed)[0]
        flips = np.flatnonzero(d != res.decision)
        if flips.size:
            j = flips[int(np.argmin(np.array(tags)[flips]))]
            return tags[j], rows[j]
    return None, None


def test_bp_bounds(sample, score: ScoreFamily, spec: TestSpec) -> TestAudit:
    """Bracket the decision breakdown point of a one-sample test."""
    if spec.kind == "two_sample_wald":
        raise DomainError("use two_sample_bp_bounds for two-sample tests")
    xs = _centered(sample, spec)
    n = xs.size
    cap = -(-n // 2)
    ms = np.arange(1, cap + 1)
    spread_fixed = (restricted_score_spread(score, spec.sigma0)
                    if spec.kind == "restricted_score" else None)
    d, lo, hi, c, s = decisions_batch(xs[None], score, spec, spread_fixed)
    res = TestResult(int(d[0]), float(lo[0]), float(hi[0]), float(c[0]), float(s[0]))
    if math.isfinite(res.spread) and math.isfinite(res.center):
        cu, cd, su, sd = _one_sample_arrays(xs, score, spec, ms, res)
        low = _lower_m(res, spec.z, ms, cu, cd, su, sd, spec.exact)
    else:
        # degenerate spread or centre: only the trivial lower bound holds
        cu = cd = np.zeros(ms.size)
        low = 1 if ms.size else None
    up, wit = _flip_search(xs, score, spec, res, ms, cu, cd, spread_fixed)
    if up is not None and (low is None or low > up):
        low = up
    br = Bracket(low, up, n, cap, spec.exact)
    audit = TestAudit(spec, res, witness=wit)
    if res.decision == 1:
        audit.reject_bp = br
    else:
        audit.accept_bp = br
    return audit


def score_test_bp(sample, score: ScoreFamily, spec: TestSpec) -> TestAudit:
    """Bracket for score tests (plug-in or fixed null spread)."""
    if spec.kind not in ("score", "restricted_score"):
        raise DomainError("score_test_bp needs a score test spec")
    return test_bp_bounds(sample, score, spec)


# ----------------------------------------------------------------- two-sample

def _splits(m: int, nx: int, ny: int, budget: str):
    if budget == "per_sample":
        return [(min(m, nx), min(m, ny))]
    return [(k, m - k) for k in range(0, m + 1) if k <= nx and m - k <= ny]


@dataclass
class _SampleArrays:
    theta: float
    se: float
    lu: np.ndarray
    ld: np.ndarray
    su: np.ndarray
    sd: np.ndarray


def _per_sample_arrays(xs, score, kmax) -> _SampleArrays:
    ks = np.arange(0, kmax + 1)
    theta = float(_mid_location(score, xs[None])[0])
    lu, ld = location_sensitivity_arrays(xs, score, ks, theta)
    su, sd, se = se_plugin_upper_arrays(xs, score, ks, theta, lu, ld)
    return _SampleArrays(theta, se, lu, ld, su, sd)


def two_sample_sensitivities(ax: _SampleArrays, ay: _SampleArrays, m: int, nx, ny, budget):
    """Contrast and pooled-SE sensitivity bounds at budget ``m``.

    Returns ``(c_up, c_dn, s_up, s_dn)``; each part is maximised over the
    admissible splits separately, which keeps every entry a valid bound.
    """
    se = math.hypot(ax.se, ay.se)
    c_up = c_dn = s_up = s_dn = 0.0
    for k1, k2 in _splits(m, nx, ny, budget):
        c_up = max(c_up, ax.lu[k1] + ay.ld[k2])
        c_dn = max(c_dn, ax.ld[k1] + ay.lu[k2])
        s_up = max(s_up, math.hypot(ax.se + ax.su[k1], ay.se + ay.su[k2]) - se)
        s_dn = max(s_dn, se - math.hypot(max(ax.se - ax.sd[k1], 0.0),
                                         max(ay.se - ay.sd[k2], 0.0)))
    return c_up, c_dn, s_up, s_dn


def _two_sample_candidates(xs, ys, m, budget, res, spec):
    """Scheme contaminations over all budget splits, in both push directions."""
    nx, ny = xs.size, ys.size
    sch = spec.scheme
    x_dn, x_up = sch.resolve(xs, "right"), sch.resolve(xs, "left")
    y_dn, y_up = sch.resolve(ys, "right"), sch.resolve(ys, "left")
    want_down = res.decision == 0 or res.lower > 0
    want_up = res.decision == 0 or res.upper < 0
    out = []
    for k1, k2 in _splits(m, nx, ny, budget):
        if want_down:
            for tx, ty in product(x_dn, y_up):
                out.append((replace_extremes(xs, k1, tx, "high"),
                            replace_extremes(ys, k2, ty, "low")))
        if want_up:
            for tx, ty in product(x_up, y_dn):
                out.append((replace_extremes(xs, k1, tx, "low"),
                            replace_extremes(ys, k2, ty, "high")))
    return out


def two_sample_bp_bounds(x, y, score: ScoreFamily, spec: TestSpec) -> TestAudit:
    """Bracket the decision breakdown point of the two-sample Wald test.

    Breakdown fractions are normalised by ``n_star = min(n_x, n_y)``.
    """
    if spec.kind != "two_sample_wald":
        spec = TestSpec("two_sample_wald", spec.alpha, spec.theta0, spec.sided,
                        spec.sigma0, spec.scheme, spec.budget)
    xs = as_sample(x).sorted - spec.theta0
    ys = as_sample(y).sorted
    nx, ny = xs.size, ys.size
    n_star = min(nx, ny)
    cap = -(-n_star // 2)
    kmax = cap if spec.budget == "per_sample" else min(cap, max(nx, ny))
    d, lo, hi, c, s = two_sample_decisions_batch(xs[None], ys[None], score, spec)
    res = TestResult(int(d[0]), float(lo[0]), float(hi[0]), float(c[0]), float(s[0]))
    ms = np.arange(1, cap + 1)
    if res.degenerate or not math.isfinite(res.center):
        low = 1 if ms.size else None
    else:
        ax = _per_sample_arrays(xs, score, min(kmax, nx))
        ay = _per_sample_arrays(ys, score, min(kmax, ny))
        arr = np.array([two_sample_sensitivities(ax, ay, int(m), ax.lu.size - 1,
                                                 ay.lu.size - 1, spec.budget) for m in ms])
        cu, cd, su, sd = (arr[:, j] for j in range(4)) if ms.size else (np.zeros(0),) * 4
        low = _lower_m(res, spec.z, ms, cu, cd, su, sd, False)
    up, wit = None, None
    for m in ms:
        cands = _two_sample_candidates(xs, ys, int(m), spec.budget, res, spec)
        if not cands:
            continue
        dd = two_sample_decisions_batch(np.array([a for a, _ in cands]),
                                        np.array([b for _, b in cands]), score, spec)[0]
        hit = np.flatnonzero(dd != res.decision)
        if hit.size:
            up, wit = int(m), cands[int(hit[0])]
            break
    if up is not None and (low is None or low > up):
        low = up
    br = Bracket(low, up, n_star, cap, False)
    audit = TestAudit(spec, res, witness=wit)
    if res.decision == 1:
        audit.reject_bp = br
    else:
        audit.accept_bp = br
    return audit


@dataclass(frozen=True)
class StatisticBand:
    """Range of the contaminated standardised contrast in one direction.

    ``attained`` is reached by ``witness``; ``certified`` bounds every
    contamination with the same budget.  ``low <= high`` orders the two.
    """

    m: int
    direction: str
    attained: float
    certified: float
    witness: tuple | None = None

    @property
    def low(self) -> float:
        return min(self.attained, self.certified)

    @property
    def high(self) -> float:
        return max(self.attained, self.certified)


def statistic_band(x, y, score: ScoreFamily, m: int, spec: TestSpec | None = None,
                   direction: str = "up") -> StatisticBand:
    """Band for ``T = (theta_x - theta_y) / se`` after ``m`` replacements.

    For ``direction="up"`` the attained value is the largest ``T`` over the
    scheme contaminations and the certified value is an upper bound on every
    achievable ``T``; ``"down"`` mirrors this.
    """
    spec = spec or TestSpec("two_sample_wald")
    xs = as_sample(x).sorted - spec.theta0
    ys = as_sample(y).sorted
    nx, ny = xs.size, ys.size
    n_star = min(nx, ny)
    if m < 0 or m > -(-n_star // 2):
        raise DomainError(f"m must lie in [0, {-(-n_star // 2)}]")
    d, lo, hi, c, s = two_sample_decisions_batch(xs[None], ys[None], score, spec)
    stat = float(c[0] / s[0])
    if m == 0:
        return StatisticBand(0, direction, stat, stat, (xs, ys))
    if not (math.isfinite(stat) and float(s[0]) > 0):
        raise DegenerateError("the standardised contrast is undefined for these samples")
    ax = _per_sample_arrays(xs, score, min(m, nx))
    ay = _per_sample_arrays(ys, score, min(m, ny))
    cu, cd, su, sd = two_sample_sensitivities(ax, ay, m, ax.lu.size - 1, ay.lu.size - 1,
                                              spec.budget)
    se, delta = float(s[0]), float(c[0])
    if direction == "up":
        top = delta + cu
        if top >= 0:
            cert = math.inf if se - sd <= 0 else float(top / (se - sd))
        else:
            cert = float(top / (se + su))
        fake = TestResult(0, -1.0, 1.0, delta, se)
    elif direction == "down":
        bot = delta - cd
        if bot <= 0:
            cert = -math.inf if se - sd <= 0 else float(bot / (se - sd))
        else:
            cert = float(bot / (se + su))
        fake = TestResult(0, -1.0, 1.0, delta, se)
    else:
        raise DomainError("direction must be 'up' or 'down'")
    cands = [pair for pair in _two_sample_candidates(xs, ys, m, spec.budget, fake, spec)]
    # keep the direction-appropriate half: the candidate list alternates
    # push-down and push-up blocks per split
    _, _, _, cc, ss = two_sample_decisions_batch(np.array([a for a, _ in cands]),
                                                 np.array([b for _, b in cands]), score, spec)
    with np.errstate(invalid="ignore", divide="ignore"):
        T = cc / ss
    T = np.where(np.isnan(T), -np.inf if direction == "up" else np.inf, T)
    j = int(np.argmax(T)) if direction == "up" else int(np.argmin(T))
    att = float(T[j])
    if direction == "up":
        att = max(att, stat)
    else:
        att = min(att, stat)
    return StatisticBand(m, direction, att, cert, cands[j])


# ------------------------------------------------- two-stage standard error

def two_stage_se_ratio(y: np.ndarray, score: ScoreFamily, chi: ScaleScoreFamily):
    """Ratio part ``sqrt(sum psi(r)^2) / sum psi'(r)`` of the two-stage SE."""
    f = solve_two_stage(y, score, chi)
    r = (np.asarray(y, float) - f.theta_hat) / f.sigma_hat
    den = float(np.sum(score.dpsi(r)))
    return math.sqrt(float(np.sum(score.psi(r) ** 2))) / den if den > 0 else math.inf


def two_stage_test_se_upper(sample, score: ScoreFamily, chi: ScaleScoreFamily, m: int,
                            side: str = "two_sided") -> SensitivityPoint:
    """Upper bounds on the sensitivities of the two-stage SE ratio.

    The shift term accounts for the joint movement of the location and
    scale estimates; the bounds are valid but can be loose.  A deflated
    scale bracket touching zero gives ``inf``.
    """
    sample = as_sample(sample)
    xs, n = sample.sorted, sample.n
    f = solve_two_stage(sample, score, chi)
    theta, sig = f.theta_hat, f.sigma_hat
    r = (xs - theta) / sig
    ratio0 = math.sqrt(float(np.sum(score.psi(r) ** 2))) / float(np.sum(score.dpsi(r)))
    if m == 0:
        return SensitivityPoint(0, 0.0, 0.0, "upper_bound", n)
    s_up, s_dn = (float(v[0]) for v in scale_sensitivity_arrays(sample, chi, [m], sig))
    t_up, t_dn = (float(v[0]) for v in two_stage_upper_arrays(sample, score, chi, [m], f))
    sig_lo = sig - s_dn
    if sig_lo <= 0 or not math.isfinite(t_up + t_dn + s_up):
        return SensitivityPoint(m, math.inf, ratio0, "upper_bound", n)
    sig_hi = sig + s_up
    pmax, pmax2 = score.psi_max, score.psi_max ** 2
    d0 = float(score.dpsi(0.0))
    eta_s = max(s_up, s_dn)
    eta_t = max(t_up, t_dn)
    c_shift = 2 * pmax * d0 * (eta_s / (sig_lo * sig) * (np.abs(xs).sum() + n * abs(theta))
                               + n * eta_t / sig_lo)
    order = np.argsort(np.abs(xs - theta), kind="stable")
    xp = xs[order]
    p2 = score.psi((xp - theta) / sig) ** 2
    gap = curvature_gap(score, eta_t / sig_lo)
    mm = np.array([m])
    s_plus = int(_count_s_plus(xs, theta, mm, np.array([t_up]), np.array([t_dn]))[0])
    s_minus = int(_count_s_minus(xs, theta, mm, np.array([t_up]), np.array([t_dn]),
                                 "corrected")[0])
    dp_lo = score.dpsi((xp - theta) / sig_lo)
    dp_hi = score.dpsi((xp - theta) / sig_hi)
    num_up = 5 * m * pmax2 + p2[m:].sum() + c_shift
    den_up = max(dp_lo[m:].sum() - s_plus * gap, 0.0)
    num_dn = max(-4 * m * pmax2 + p2[: n - m].sum() - c_shift, 0.0)
    den_dn = m * d0 + dp_hi[: n - m].sum() + s_minus * gap
    if score.kind == "huber":
        ql, qh = band_count_ranges(xs / sig_lo, theta / sig_lo, [(theta - t_dn) / sig_lo],
                                   [(theta + t_up) / sig_lo], score.delta)
        den_up = max(den_up, dp_lo[m:].sum() + d0 * (int(ql[0]) - m))
        den_dn = min(den_dn, m * d0 + dp_hi[: n - m].sum() + d0 * (int(qh[0]) + m))
    up = math.inf if den_up <= 0 else math.sqrt(num_up) / den_up - ratio0
    dn = ratio0 if den_dn <= 0 else ratio0 - math.sqrt(num_dn) / den_dn
    return SensitivityPoint(m, float(max(up, 0.0)), float(min(max(dn, 0.0), ratio0)), "upper_bound", n)
