"""M-estimators of location and scale, their weighted and two-stage variants.

All estimating equations here are monotone in the unknown, so every solver
reduces to :func:`batched_root`, a vectorised bracketed bisection that works
on many independent problems at once.  The same engine drives the
sensitivity, oracle and bootstrap code.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateError, DomainError, NumericError
from .score import ScaleScoreFamily, ScoreFamily

MAX_BISECT = 200
MAX_DOUBLINGS = 80
# brackets stop growing at this multiple of the data spread; beyond it the
# root is declared infinite
BRACKET_CAP = 2.0 ** 60
WEIGHT_TOL = 1e-12
LOG_SCALE_CAP = 700.0
# relative size below which an estimating-equation sum counts as zero
SNAP_EPS = 64 * np.finfo(float).eps


# ---------------------------------------------------------------- data types

@dataclass(frozen=True)
class Sample:
    """A univariate sample kept in input order and sorted."""

    values: np.ndarray
    sorted: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size == 0:
            raise DomainError("sample is empty")
        if np.any(np.isnan(v)):
            raise DomainError("sample contains NaN")
        v.setflags(write=False)
        s = np.sort(v)
        s.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sorted", s)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def shifted(self, c: float) -> "Sample":
        return Sample(self.values + c)

    def scaled(self, c: float) -> "Sample":
        return Sample(self.values * c)

    def __len__(self):
        return self.n


def as_sample(x) -> Sample:
    return x if isinstance(x, Sample) else Sample(x)


@dataclass(frozen=True)
class WeightedSample:
    """Sorted values with normalised nonnegative weights and their prefix sums."""

    sorted_values: np.ndarray
    weights: np.ndarray
    cum_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.array(self.sorted_values, dtype=float).ravel()
        w = np.array(self.weights, dtype=float).ravel()
        if x.size == 0 or x.size != w.size:
            raise DomainError("values and weights must be nonempty and aligned")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise DomainError("weights sum to zero")
        w = w / total
        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order]
        cw = np.cumsum(w)
        cw[-1] = 1.0
        for a in (x, w, cw):
            a.setflags(write=False)
        object.__setattr__(self, "sorted_values", x)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cum_weights", cw)

    @classmethod
    def uniform(cls, x) -> "WeightedSample":
        x = np.asarray(x, float)
        return cls(x, np.full(x.size, 1.0 / x.size))

    @property
    def n(self) -> int:
        return int(self.sorted_values.size)


@dataclass(frozen=True)
class FitResult:
    theta_hat: float
    sigma_hat: float | None = None
    se_hat: float | None = None
    residual: float = 0.0
    root_interval: tuple = (math.nan, math.nan)


# ------------------------------------------------------------- root engine

def batched_root(g: Callable[[np.ndarray], np.ndarray], center, radius, side: str,
                 cap=None) -> np.ndarray:
    """Extremal roots of many nonincreasing functions at once.

    ``g`` maps an array of candidate arguments (one per problem) to the
    values of the corresponding functions.  ``side="low"`` returns
    ``inf{t : g(t) <= 0}`` and ``side="high"`` returns ``sup{t : g(t) >= 0}``.
    Brackets grow from ``center +/- radius`` by doubling; if ``cap`` is reached
    without a sign change the root is reported as ``-inf`` or ``+inf``.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    radius = np.broadcast_to(np.asarray(radius, dtype=float), center.shape).copy()
    if cap is None:
        cap = BRACKET_CAP * np.maximum(np.maximum(radius, np.abs(center)), 1.0)
    cap = np.broadcast_to(np.asarray(cap, dtype=float), center.shape)
    if side == "low":
        left_ok = lambda v: v > 0
    elif side == "high":
        left_ok = lambda v: v >= 0
    else:
        raise DomainError(f"side must be 'low' or 'high', got {side!r}")

    def grow(sign):
        rad = radius.copy()
        pos = center + sign * rad
        want = (lambda v: left_ok(v)) if sign < 0 else (lambda v: ~left_ok(v))
        ok = want(np.asarray(g(pos), float))
        for _ in range(MAX_DOUBLINGS):
            if ok.all():
                break
            todo = ~ok & (rad < cap)
            if not todo.any():
                break
            rad = np.where(todo, np.minimum(2.0 * rad, cap), rad)
            pos = center + sign * rad
            ok = ok | want(np.asarray(g(pos), float))
        return pos, ok

    a, a_ok = grow(-1.0)
    b, b_ok = grow(+1.0)
    both = a_ok & b_ok
    a = np.where(both, a, 0.0)
    b = np.where(both, b, 0.0)
    for _ in range(MAX_BISECT):
        mid = a + 0.5 * (b - a)
        active = both & (mid > a) & (mid < b)
        if not active.any():
            break
        go_right = left_ok(np.asarray(g(np.where(active, mid, a)), float))
        a = np.where(active & go_right, mid, a)
        b = np.where(active & ~go_right, mid, b)
    out = b if side == "low" else a
    out = np.where(a_ok, out, -np.inf)
    return np.where(b_ok, out, np.inf)


def _row_stats(X, W):
    """Median and spread of the finite, positively weighted entries per row."""
    finite = np.isfinite(X) & (W > 0)
    Xm = np.where(finite, X, np.nan)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        center = np.nanmedian(Xm, axis=1)
        spread = np.nanmax(Xm, axis=1) - np.nanmin(Xm, axis=1)
    center = np.where(np.isfinite(center), center, 0.0)
    spread = np.where(np.isfinite(spread), spread, 0.0)
    return center, spread


def _snap(total, terms, const):
    """Zero out sums that vanish up to rounding, so exact cancellations
    (for example bounded scores at infinity) are seen as flat zeros."""
    return snap(total, np.sum(np.abs(terms), axis=1) + np.abs(const))


def snap(total, scale):
    """``total`` with values below rounding level relative to ``scale`` set to 0."""
    with np.errstate(invalid="ignore"):
        return np.where(np.abs(total) <= SNAP_EPS * scale, 0.0, total)


def location_roots(score: ScoreFamily, X, W=None, const=None, side: str = "mid",
                   divisor=None) -> np.ndarray:
    """Roots of ``sum_j W_ij psi((X_ij - t) / divisor_i) + const_i`` for each row.

    ``X`` may hold infinite entries.  Entries with zero weight are ignored.
    ``side`` is ``"low"``, ``"high"`` or ``"mid"`` (midpoint of the two).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R = X.shape[0]
    W = np.ones_like(X) if W is None else np.broadcast_to(np.asarray(W, float), X.shape)
    const = np.zeros(R) if const is None else np.broadcast_to(np.asarray(const, float), (R,))
    X = np.where(W > 0, X, 0.0)
    s = np.ones(R) if divisor is None else np.broadcast_to(np.asarray(divisor, float), (R,))
    center, spread = _row_stats(X, W)
    radius = 0.5 * np.maximum(spread, s)
    cap = BRACKET_CAP * np.maximum(np.maximum(spread, np.abs(center)), s)

    def g(t):
        with np.errstate(invalid="ignore"):
            vals = score.psi((X - t[:, None]) / s[:, None])
        vals = np.where(W > 0, vals, 0.0)
        return _snap(np.sum(W * vals, axis=1) + const, W * vals, const)

    if side == "mid":
        lo = batched_root(g, center, radius, "low", cap)
        hi = batched_root(g, center, radius, "high", cap)
        with np.errstate(invalid="ignore"):
            return np.where(lo == hi, lo, 0.5 * lo + 0.5 * hi)
    return batched_root(g, center, radius, side, cap)


def _tol_abs(score: ScoreFamily, n: int) -> float:
    return 1e-10 * n * score.psi_max if score.bounded else 1e-10


# ---------------------------------------------------------------- location

def score_sum(x, score: ScoreFamily, theta: float, sigma: float = 1.0) -> float:
    return float(np.sum(score.psi((np.asarray(x, float) - theta) / sigma)))


def solve_location(sample, score: ScoreFamily, root: str = "mid") -> FitResult:
    """Location M-estimate: the root of ``sum psi(x_i - theta) = 0``.

    When the zero set is an interval the midpoint is returned unless
    ``root`` asks for its lower (``"low"``) or upper (``"high"``) end.
    """
    sample = as_sample(sample)
    x = sample.sorted[None, :]
    lo = float(location_roots(score, x, side="low")[0])
    hi = float(location_roots(score, x, side="high")[0])
    theta = {"low": lo, "high": hi, "mid": lo if lo == hi else 0.5 * (lo + hi)}[root]
    if not math.isfinite(theta):
        raise NumericError("location equation has no finite root")
    res = score_sum(sample.sorted, score, theta)
    return FitResult(theta, residual=res, root_interval=(lo, hi))


def solve_location_weighted(wsample: WeightedSample, score: ScoreFamily,
                            root: str = "mid") -> FitResult:
    """Weighted location estimate solving ``sum w_i psi(x_i - theta) = 0``."""
    x = wsample.sorted_values[None, :]
    w = wsample.weights[None, :]
    lo = float(location_roots(score, x, w, side="low")[0])
    hi = float(location_roots(score, x, w, side="high")[0])
    theta = {"low": lo, "high": hi, "mid": lo if lo == hi else 0.5 * (lo + hi)}[root]
    res = float(np.sum(w * score.psi(x - theta)))
    return FitResult(theta, residual=res, root_interval=(lo, hi))


def solve_location_weighted_batch(x, weights, score: ScoreFamily) -> np.ndarray:
    """Weighted location estimates for a batch of weight vectors (rows)."""
    x = np.asarray(x, float)
    W = np.atleast_2d(np.asarray(weights, float))
    W = W / W.sum(axis=1, keepdims=True)
    X = np.broadcast_to(x, W.shape)
    return location_roots(score, X, W, side="mid")


# ------------------------------------------------------------------- scale

def scale_roots(chi: ScaleScoreFamily, X, W=None, const=None, side: str = "mid",
                center=None) -> np.ndarray:
    """Roots ``sigma`` of ``sum_j W_ij chi(X_ij / sigma) + const_i`` for each row.

    The search runs on ``log sigma``.  A row with no positive root gets ``0``
    (the sum is never positive) or ``inf`` (never negative).
    """
    X = np.atleast_2d(np.abs(np.asarray(X, dtype=float)))
    R = X.shape[0]
    W = np.ones_like(X) if W is None else np.broadcast_to(np.asarray(W, float), X.shape)
    const = np.zeros(R) if const is None else np.broadcast_to(np.asarray(const, float), (R,))
    X = np.where(W > 0, X, 0.0)
    if center is None:
        pos = np.where((X > 0) & np.isfinite(X), X, np.nan)
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            center = np.log(np.nanmedian(pos, axis=1))
        center = np.where(np.isfinite(center), center, 0.0)
    center = np.broadcast_to(np.asarray(center, float), (R,))

    def g(s):
        sig = np.exp(s)[:, None]
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            vals = chi.chi(X / sig)
        vals = np.where(W > 0, vals, 0.0)
        return _snap(np.sum(W * vals, axis=1) + const, W * vals, const)

    def solve(which):
        s = batched_root(g, center, 1.0, which, cap=LOG_SCALE_CAP)
        with np.errstate(over="ignore"):
            return np.exp(s)

    if side == "mid":
        lo, hi = solve("low"), solve("high")
        return np.where(lo == hi, lo, np.sqrt(lo) * np.sqrt(hi))
    return solve(side)


def solve_scale(sample, chi: ScaleScoreFamily, root: str = "mid",
                center: float | None = None) -> FitResult:
    """Scale M-estimate: the positive root of ``sum chi(x_i / sigma) = 0``.

    ``center`` (a number) is subtracted from the data first; by default the
    data are used as given.  A flat zero set returns the geometric midpoint.
    """
    sample = as_sample(sample)
    x = sample.sorted - (0.0 if center is None else center)
    if not np.any(x != 0):
        raise DegenerateError("all observations are zero; scale is undefined")
    lo = float(scale_roots(chi, x[None, :], side="low")[0])
    hi = float(scale_roots(chi, x[None, :], side="high")[0])
    sig = {"low": lo, "high": hi, "mid": lo if lo == hi else math.sqrt(lo) * math.sqrt(hi)}[root]
    if not (0 < sig < math.inf):
        raise DegenerateError(
            f"scale equation has no positive finite root (interval [{lo}, {hi}])")
    res = float(np.sum(chi.chi(x / sig)))
    return FitResult(math.nan, sigma_hat=sig, residual=res, root_interval=(lo, hi))


def _centering(x: np.ndarray, center) -> float:
    if center is None:
        return 0.0
    if center == "median":
        return float(np.median(x))
    if isinstance(center, (int, float)):
        return float(center)
    raise DomainError(f"unknown centering {center!r}")


def solve_two_stage(sample, score: ScoreFamily, chi: ScaleScoreFamily,
                    root: str = "mid", center=None) -> FitResult:
    """Two-stage estimate: ``sigma`` from the scale equation, then
    ``theta`` from ``sum psi((x_i - theta) / sigma) = 0``.

    ``center=None`` solves the scale equation on the raw data; ``"median"``
    centers at the sample median first, which makes the pair fully affine
    equivariant.
    """
    sample = as_sample(sample)
    c = _centering(sample.sorted, center)
    sig = solve_scale(sample, chi, center=c).sigma_hat
    x = sample.sorted[None, :]
    lo = float(location_roots(score, x, side="low", divisor=sig)[0])
    hi = float(location_roots(score, x, side="high", divisor=sig)[0])
    theta = {"low": lo, "high": hi, "mid": lo if lo == hi else 0.5 * (lo + hi)}[root]
    res = score_sum(sample.sorted, score, theta, sig)
    return FitResult(theta, sigma_hat=sig, residual=res, root_interval=(lo, hi))


# ------------------------------------------------------------ standard error

def plugin_se(sample, score: ScoreFamily, theta: float, sigma: float = 1.0) -> float:
    """Plug-in standard error ``sqrt(sum psi^2) / sum psi'`` at ``theta``.

    With ``sigma`` given, residuals are standardised as ``(x - theta)/sigma``.
    """
    x = as_sample(sample).sorted
    r = (x - theta) / sigma
    num = float(np.sum(score.psi(r) ** 2))
    den = float(np.sum(score.dpsi(r)))
    if den <= 0:
        raise DegenerateError("sum of score derivatives is zero; standard error undefined")
    return math.sqrt(num) / den


def fit(sample, score: ScoreFamily, chi: ScaleScoreFamily | None = None,
        center=None) -> FitResult:
    """Location (or two-stage) fit with its plug-in standard error."""
    if chi is None:
        f = solve_location(sample, score)
        se = plugin_se(sample, score, f.theta_hat)
        return FitResult(f.theta_hat, None, se, f.residual, f.root_interval)
    f = solve_two_stage(sample, score, chi, center=center)
    se = plugin_se(sample, score, f.theta_hat, f.sigma_hat) * f.sigma_hat
    return FitResult(f.theta_hat, f.sigma_hat, se, f.residual, f.root_interval)
