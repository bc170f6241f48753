"""Threshold breakdown points and m-sensitivities.

Exact results cover location and scale M-estimators, weighted (bootstrap)
location estimates and the standard error evaluated at a fixed centre.
Two-stage location estimates and the plug-in standard error only admit
computable brackets; both ends of each bracket are returned.

Conventions
-----------
* ``m`` counts replaced observations; ``m = 0`` always has zero sensitivity.
* The plus-side sensitivity uses the largest root of the contaminated
  estimating equation, the minus side the smallest root.
* Infinite sensitivities are reported as ``math.inf`` and flagged as
  breakdown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DegenerateError, DomainError
from .estimators import (
    Sample,
    WeightedSample,
    as_sample,
    location_roots,
    plugin_se,
    scale_roots,
    solve_location,
    solve_location_weighted,
    solve_scale,
    snap,
    solve_two_stage,
)
from .score import ScaleScoreFamily, ScoreFamily

SIDES = ("plus", "minus")


# ------------------------------------------------------------------ results

@dataclass(frozen=True)
class SensitivityPoint:
    """One-sided and two-sided m-sensitivities at a single ``m``."""

    m: int
    eta_plus: float
    eta_minus: float
    kind: str = "exact"
    n: int | None = None

    @property
    def eta_two_sided(self) -> float:
        return max(self.eta_plus, self.eta_minus)

    eta = eta_two_sided

    @property
    def breakdown(self) -> bool:
        return math.isinf(self.eta_two_sided)

    def as_row(self) -> dict:
        n = self.n or 0
        return {
            "m": self.m,
            "m_over_n": self.m / n if n else math.nan,
            "eta_plus": self.eta_plus,
            "eta_minus": self.eta_minus,
            "eta": self.eta_two_sided,
            "kind": self.kind,
        }


@dataclass(frozen=True)
class BreakdownResult:
    """Smallest number of replacements ``m`` that moves the statistic by ``eta``.

    ``m`` is ``None`` when no admissible ``m`` achieves the shift.
    """

    eta: float
    side: str
    m: int | None
    n: int
    kind: str = "exact"

    @property
    def bp(self) -> float:
        return math.inf if self.m is None else self.m / self.n


@dataclass
class SensitivityCurve:
    points: list = field(default_factory=list)
    n: int = 0
    label: str = ""

    def rows(self) -> list[dict]:
        return [p.as_row() for p in self.points]

    def values(self, kind: str | None = None, side: str = "two_sided") -> np.ndarray:
        attr = {"plus": "eta_plus", "minus": "eta_minus", "two_sided": "eta_two_sided"}[side]
        return np.array([getattr(p, attr) for p in self.points
                         if kind is None or p.kind == kind])

    def ms(self, kind: str | None = None) -> np.ndarray:
        return np.array([p.m for p in self.points if kind is None or p.kind == kind])


def _check_side(side: str) -> str:
    if side in ("+", "plus", "up"):
        return "plus"
    if side in ("-", "minus", "down"):
        return "minus"
    if side in ("both", "two_sided", "two-sided"):
        return "two_sided"
    raise DomainError(f"unknown side {side!r}")


def _check_m(m, n):
    m = np.atleast_1d(np.asarray(m))
    if m.size and (np.any(m < 0) or np.any(m > n) or np.any(m != np.round(m))):
        raise DomainError(f"m must be an integer in [0, {n}]")
    return m.astype(int)


def _times_inf(m, v):
    """``m * v`` with ``0 * inf`` read as 0."""
    m = np.asarray(m, float)
    with np.errstate(invalid="ignore"):
        return np.where(m > 0, m * v, 0.0)


def _first_true(flags: np.ndarray, ms: np.ndarray):
    hit = np.flatnonzero(flags)
    return int(ms[hit[0]]) if hit.size else None


# ---------------------------------------------------------------- location

def contaminated_location_roots(score: ScoreFamily, xs: np.ndarray, ms, side: str,
                                divisor: float = 1.0) -> np.ndarray:
    """Extremal roots after sending the ``m`` extreme points to infinity.

    ``side="plus"`` moves the ``m`` smallest values to ``+inf`` and returns the
    largest root; ``"minus"`` moves the ``m`` largest to ``-inf`` and returns
    the smallest root.  ``xs`` must be sorted; one root per entry of ``ms``.
    """
    xs = np.asarray(xs, float)
    ms = np.atleast_1d(ms)
    n = xs.size
    idx = np.arange(n)
    X = np.broadcast_to(xs, (ms.size, n))
    if side == "plus":
        W = (idx[None, :] >= ms[:, None]).astype(float)
        const = _times_inf(ms, score.psi_pos_inf)
        return location_roots(score, X, W, const, "high", divisor)
    W = (idx[None, :] < (n - ms)[:, None]).astype(float)
    const = _times_inf(ms, score.psi_neg_inf)
    return location_roots(score, X, W, const, "low", divisor)


def location_sensitivity_arrays(sample, score: ScoreFamily, ms, theta_hat=None):
    """Vectorised exact location sensitivities ``(eta_plus, eta_minus)`` over ``ms``."""
    sample = as_sample(sample)
    ms = _check_m(ms, sample.n)
    if theta_hat is None:
        theta_hat = solve_location(sample, score).theta_hat
    up = contaminated_location_roots(score, sample.sorted, ms, "plus") - theta_hat
    dn = theta_hat - contaminated_location_roots(score, sample.sorted, ms, "minus")
    up = np.where(ms == 0, 0.0, np.maximum(up, 0.0))
    dn = np.where(ms == 0, 0.0, np.maximum(dn, 0.0))
    return up, dn


def location_sensitivity(sample, score: ScoreFamily, theta_hat: float | None = None,
                         m: int = 1, side: str = "two_sided") -> SensitivityPoint:
    """Exact one-sided m-sensitivities of a monotone location M-estimate.

    The plus side is the largest ``eta`` with
    ``sum_{i>m} psi(x_(i) - theta_hat - eta) + m psi(inf) >= 0``; the minus
    side mirrors it.  Both are always computed; ``side`` is accepted for
    interface symmetry with the breakdown functions.
    """
    _check_side(side)
    sample = as_sample(sample)
    up, dn = location_sensitivity_arrays(sample, score, [m], theta_hat)
    return SensitivityPoint(int(m), float(up[0]), float(dn[0]), "exact", sample.n)


def location_bp(sample, score: ScoreFamily, theta_hat: float | None, eta: float,
                side: str = "two_sided") -> BreakdownResult:
    """Exact threshold breakdown point by a linear scan over ``m``."""
    if not eta > 0:
        raise DomainError("eta must be positive")
    side = _check_side(side)
    sample = as_sample(sample)
    if theta_hat is None:
        theta_hat = solve_location(sample, score).theta_hat
    xs, n = sample.sorted, sample.n
    ms = np.arange(1, n + 1)
    found = []
    if side in ("plus", "two_sided"):
        v = score.psi(xs - (theta_hat + eta))
        tail = np.concatenate([np.cumsum(v[::-1])[::-1], [0.0]])  # tail[m] = sum_{i>m}
        mag = np.concatenate([np.cumsum(np.abs(v[::-1]))[::-1], [0.0]])
        with np.errstate(invalid="ignore"):
            c = ms * score.psi_pos_inf
            ok = snap(tail[ms] + c, mag[ms] + np.abs(c)) >= 0
        found.append(_first_true(ok, ms))
    if side in ("minus", "two_sided"):
        v = score.psi(xs - (theta_hat - eta))
        head = np.concatenate([[0.0], np.cumsum(v)])  # head[k] = sum_{i<=k}
        mag = np.concatenate([[0.0], np.cumsum(np.abs(v))])
        with np.errstate(invalid="ignore"):
            c = ms * score.psi_neg_inf
            ok = snap(head[n - ms] + c, mag[n - ms] + np.abs(c)) <= 0
        found.append(_first_true(ok, ms))
    hits = [f for f in found if f is not None]
    return BreakdownResult(eta, side, min(hits) if hits else None, n)


def location_sensitivity_curve(sample, score: ScoreFamily, m_grid=None,
                               theta_hat=None) -> SensitivityCurve:
    sample = as_sample(sample)
    ms = np.arange(sample.n // 2 + 1) if m_grid is None else _check_m(m_grid, sample.n)
    up, dn = location_sensitivity_arrays(sample, score, ms, theta_hat)
    pts = [SensitivityPoint(int(m), float(u), float(d), "exact", sample.n)
           for m, u, d in zip(ms, up, dn)]
    return SensitivityCurve(pts, sample.n, f"location {score.label}")


# ------------------------------------------------------------------- scale

def contaminated_scale_roots(chi: ScaleScoreFamily, abs_sorted: np.ndarray, ms,
                             side: str) -> np.ndarray:
    """Extremal scale roots after the worst inflation (``plus``) or deflation.

    Inflation moves the ``m`` smallest ``|x|`` to infinity and takes the
    largest root; deflation moves the ``m`` largest to zero and takes the
    smallest root (``0`` if the scale implodes).
    """
    a = np.asarray(abs_sorted, float)
    ms = np.atleast_1d(ms)
    n = a.size
    idx = np.arange(n)
    X = np.broadcast_to(a, (ms.size, n))
    if side == "plus":
        W = (idx[None, :] >= ms[:, None]).astype(float)
        const = ms * chi.chi_pos_inf
        return scale_roots(chi, X, W, const, "high")
    W = (idx[None, :] < (n - ms)[:, None]).astype(float)
    const = ms * chi.chi_at_zero
    return scale_roots(chi, X, W, const, "low")


def _abs_sorted(sample, center=0.0):
    return np.sort(np.abs(as_sample(sample).sorted - center))


def scale_sensitivity_arrays(sample, chi: ScaleScoreFamily, ms, sigma_hat=None,
                             center: float = 0.0):
    sample = as_sample(sample)
    ms = _check_m(ms, sample.n)
    if sigma_hat is None:
        sigma_hat = solve_scale(sample, chi, center=center).sigma_hat
    a = _abs_sorted(sample, center)
    up = contaminated_scale_roots(chi, a, ms, "plus") - sigma_hat
    dn = sigma_hat - contaminated_scale_roots(chi, a, ms, "minus")
    up = np.where(ms == 0, 0.0, np.maximum(up, 0.0))
    dn = np.where(ms == 0, 0.0, np.clip(dn, 0.0, sigma_hat))
    return up, dn


def scale_sensitivity(sample, chi: ScaleScoreFamily, sigma_hat: float | None = None,
                      m: int = 1, side: str = "two_sided") -> SensitivityPoint:
    """Exact inflation (plus) and deflation (minus) sensitivities of the scale.

    The minus side never exceeds ``sigma_hat``.
    """
    _check_side(side)
    sample = as_sample(sample)
    up, dn = scale_sensitivity_arrays(sample, chi, [m], sigma_hat)
    return SensitivityPoint(int(m), float(up[0]), float(dn[0]), "exact", sample.n)


def scale_bp(sample, chi: ScaleScoreFamily, sigma_hat: float | None, eta: float,
             side: str = "two_sided") -> BreakdownResult:
    """Exact threshold breakdown point of the scale estimate.

    For the minus side with ``eta >= sigma_hat`` the smallest ``m`` that
    drives the scale to zero is returned.
    """
    if not eta > 0:
        raise DomainError("eta must be positive")
    side = _check_side(side)
    sample = as_sample(sample)
    if sigma_hat is None:
        sigma_hat = solve_scale(sample, chi).sigma_hat
    a, n = _abs_sorted(sample), sample.n
    ms = np.arange(1, n + 1)
    found = []
    if side in ("plus", "two_sided"):
        v = chi.chi(a / (sigma_hat + eta))
        tail = np.concatenate([np.cumsum(v[::-1])[::-1], [0.0]])
        found.append(_first_true(tail[ms] + ms * chi.chi_pos_inf >= 0, ms))
    if side in ("minus", "two_sided"):
        if eta < sigma_hat:
            v = chi.chi(a / (sigma_hat - eta))
        else:
            v = np.where(a > 0, chi.chi_pos_inf, chi.chi_at_zero)
        head = np.concatenate([[0.0], np.cumsum(v)])
        found.append(_first_true(head[n - ms] + ms * chi.chi_at_zero <= 0, ms))
    hits = [f for f in found if f is not None]
    return BreakdownResult(eta, side, min(hits) if hits else None, n)


def scale_sensitivity_curve(sample, chi: ScaleScoreFamily, m_grid=None,
                            sigma_hat=None) -> SensitivityCurve:
    sample = as_sample(sample)
    ms = np.arange(sample.n // 2 + 1) if m_grid is None else _check_m(m_grid, sample.n)
    up, dn = scale_sensitivity_arrays(sample, chi, ms, sigma_hat)
    pts = [SensitivityPoint(int(m), float(u), float(d), "exact", sample.n)
           for m, u, d in zip(ms, up, dn)]
    return SensitivityCurve(pts, sample.n, "scale")


# -------------------------------------------------------------- weighted

def _weighted_kept(ws: WeightedSample, m: int, side: str) -> np.ndarray:
    """Mass left on each point after removing ``m/n`` from one tail."""
    t = m / ws.n
    w, cw = ws.weights, ws.cum_weights
    if side == "plus":
        return np.minimum(w, np.maximum(cw - t, 0.0))
    prev = np.concatenate([[0.0], cw[:-1]])
    return np.minimum(w, np.maximum((1.0 - t) - prev, 0.0))


def weighted_location_sensitivity(wsample: WeightedSample, score: ScoreFamily,
                                  theta_hat_b: float | None = None, m: int = 1,
                                  side: str = "two_sided") -> SensitivityPoint:
    """Exact sensitivities over a total-variation ball of radius ``m/n``.

    The worst case removes mass ``m/n`` from the lower (plus side) or upper
    tail, splitting the boundary observation when needed, and places it at
    infinity.
    """
    _check_side(side)
    ws = wsample
    if theta_hat_b is None:
        theta_hat_b = solve_location_weighted(ws, score).theta_hat
    if m == 0:
        return SensitivityPoint(0, 0.0, 0.0, "exact", ws.n)
    up, dn = weighted_location_sensitivity_arrays(ws, score, [m], theta_hat_b)
    return SensitivityPoint(int(m), float(up[0]), float(dn[0]), "exact", ws.n)


def weighted_location_sensitivity_arrays(ws: WeightedSample, score: ScoreFamily, ms,
                                         theta_hat_b: float):
    ms = _check_m(ms, ws.n)
    X = np.broadcast_to(ws.sorted_values, (ms.size, ws.n))
    Wp = np.stack([_weighted_kept(ws, int(m), "plus") for m in ms])
    Wm = np.stack([_weighted_kept(ws, int(m), "minus") for m in ms])
    mass = ms / ws.n
    hi = location_roots(score, X, Wp, _times_inf(mass, score.psi_pos_inf), "high")
    lo = location_roots(score, X, Wm, _times_inf(mass, score.psi_neg_inf), "low")
    up = np.where(ms == 0, 0.0, np.maximum(hi - theta_hat_b, 0.0))
    dn = np.where(ms == 0, 0.0, np.maximum(theta_hat_b - lo, 0.0))
    return up, dn


def _snapped_sum(terms: np.ndarray, const: float) -> float:
    return float(snap(np.sum(terms) + const, np.sum(np.abs(terms)) + abs(const)))


def weighted_location_bp(wsample: WeightedSample, score: ScoreFamily,
                         theta_hat_b: float | None, eta: float,
                         side: str = "two_sided") -> BreakdownResult:
    """Exact weighted breakdown point on the grid ``{1/n, ..., ceil(n/2)/n}``."""
    if not eta > 0:
        raise DomainError("eta must be positive")
    side = _check_side(side)
    ws = wsample
    if theta_hat_b is None:
        theta_hat_b = solve_location_weighted(ws, score).theta_hat
    ms = np.arange(1, -(-ws.n // 2) + 1)
    found = []
    if side in ("plus", "two_sided"):
        v = score.psi(ws.sorted_values - (theta_hat_b + eta))
        ok = [_snapped_sum(_weighted_kept(ws, m, "plus") * v, m / ws.n * score.psi_pos_inf) >= 0
              for m in ms]
        found.append(_first_true(np.array(ok), ms))
    if side in ("minus", "two_sided"):
        v = score.psi(ws.sorted_values - (theta_hat_b - eta))
        ok = [_snapped_sum(_weighted_kept(ws, m, "minus") * v, m / ws.n * score.psi_neg_inf) <= 0
              for m in ms]
        found.append(_first_true(np.array(ok), ms))
    hits = [f for f in found if f is not None]
    return BreakdownResult(eta, side, min(hits) if hits else None, ws.n)


# --------------------------------------------------------------- two-stage

def a_grid(score: ScoreFamily, steps: int = 10) -> np.ndarray:
    """Offsets ``a`` with ``psi(a * delta)`` on the grid ``{-0.1, 0, ..., 1} * delta``.

    Levels at or beyond ``psi(inf)`` map to ``a = inf``.
    """
    d = score.delta
    out = []
    for k in range(-1, steps + 1):
        level = k * d / steps
        if level >= score.psi_pos_inf:
            out.append(1.0 if score.kind == "huber" else math.inf)
            continue
        if level == 0:
            out.append(0.0)
            continue
        f = lambda a: float(score.psi(a * d)) - level
        hi = 1.0
        while f(hi) < 0 and hi < 1e12:
            hi *= 2.0
        lo = -1.0
        while f(lo) > 0 and lo > -1e12:
            lo *= 2.0
        out.append(brentq(f, lo, hi, xtol=1e-13))
    return np.array(out)


@dataclass(frozen=True)
class SchemeConfig:
    """Target locations for explicit contamination schemes.

    ``left`` entries push the estimate up, ``right`` entries push it down.
    Symbolic entries ``"inf"``, ``"-inf"``, ``"max"`` and ``"min"`` resolve to
    infinities and the sample extremes.  ``use_a_grid`` adds targets at the
    contaminated estimate shifted by ``a * delta`` for ``a`` in :func:`a_grid`.
    """

    left: tuple = ("inf", "max")
    right: tuple = ("-inf", "min")
    use_a_grid: bool = False

    def resolve(self, xs: np.ndarray, which: str) -> list[float]:
        table = {"inf": math.inf, "-inf": -math.inf, "max": float(xs[-1]), "min": float(xs[0])}
        items = self.left if which == "left" else self.right
        return [table[t] if isinstance(t, str) else float(t) for t in items]


def replace_extremes(xs: np.ndarray, m: int, value: float, which: str) -> np.ndarray:
    """Replace the ``m`` smallest (``which="low"``) or largest values by ``value``."""
    y = np.array(xs, float)
    if m == 0:
        return y
    if which == "low":
        y[:m] = value
    else:
        y[len(y) - m:] = value
    return np.sort(y)


def _two_stage_extremal(y: np.ndarray, score, chi, side: str):
    """Two-stage estimate of a contaminated sample, largest or smallest root.

    Returns ``None`` when the contaminated scale is zero or infinite.
    """
    sig = float(scale_roots(chi, y[None, :], side="mid")[0])
    if not 0 < sig < math.inf:
        return None
    which = "high" if side == "plus" else "low"
    return float(location_roots(score, y[None, :], side=which, divisor=sig)[0])


def two_stage_scheme_sensitivity(sample, score: ScoreFamily, chi: ScaleScoreFamily, m: int,
                                 scheme: SchemeConfig | None = None, fit=None):
    """Largest displacements reached by the explicit contamination schemes.

    Returns ``(eta_plus, eta_minus, witnesses)``; each is attained, so it is a
    lower bound on the true sensitivity.
    """
    sample = as_sample(sample)
    scheme = scheme or SchemeConfig()
    fit = fit or solve_two_stage(sample, score, chi)
    xs = sample.sorted
    if m == 0:
        return 0.0, 0.0, {}
    left = scheme.resolve(xs, "left")
    right = scheme.resolve(xs, "right")
    if scheme.use_a_grid:
        ag = a_grid(score)
        shift = fit.sigma_hat * score.delta * ag[np.isfinite(ag)]
        left += list(fit.theta_hat + shift)
        right += list(fit.theta_hat - shift)
    best_up, best_dn, wit = 0.0, 0.0, {}
    for c in left:
        y = replace_extremes(xs, m, c, "low")
        t = _two_stage_extremal(y, score, chi, "plus")
        if t is not None and t - fit.theta_hat > best_up:
            best_up, wit["plus"] = t - fit.theta_hat, y
    for c in right:
        y = replace_extremes(xs, m, c, "high")
        t = _two_stage_extremal(y, score, chi, "minus")
        if t is not None and fit.theta_hat - t > best_dn:
            best_dn, wit["minus"] = fit.theta_hat - t, y
    return best_up, best_dn, wit


def _safe_div(x: np.ndarray, s: float) -> np.ndarray:
    if s == 0:
        return np.where(x > 0, math.inf, np.where(x < 0, -math.inf, 0.0))
    return x / s


def two_stage_upper_arrays(sample, score: ScoreFamily, chi: ScaleScoreFamily, ms, fit=None):
    """Certified upper bounds on the two-stage location sensitivities.

    The scale is bracketed by ``[sigma_hat - eta_minus(sigma), sigma_hat +
    eta_plus(sigma)]``; the data are rescaled with the sign-dependent
    extreme of that bracket and the exact location sensitivity of the
    rescaled data is mapped back.  A bracket touching zero gives ``inf``.
    """
    sample = as_sample(sample)
    ms = _check_m(ms, sample.n)
    fit = fit or solve_two_stage(sample, score, chi)
    xs = sample.sorted
    s_up, s_dn = scale_sensitivity_arrays(sample, chi, ms, fit.sigma_hat)
    up = np.zeros(ms.size)
    dn = np.zeros(ms.size)
    for k, m in enumerate(ms):
        if m == 0:
            continue
        lo_s = max(fit.sigma_hat - s_dn[k], 0.0)
        hi_s = fit.sigma_hat + s_up[k]
        if lo_s == 0:
            up[k] = dn[k] = math.inf
            continue
        r = np.sort(np.where(xs >= 0, _safe_div(xs, lo_s), _safe_div(xs, hi_s)))
        r2 = np.sort(np.where(xs >= 0, _safe_div(xs, hi_s), _safe_div(xs, lo_s)))
        t_up = float(contaminated_location_roots(score, r, [m], "plus")[0])
        t_dn = float(contaminated_location_roots(score, r2, [m], "minus")[0])
        s_plus = lo_s if t_up <= 0 else hi_s
        s_minus = lo_s if t_dn >= 0 else hi_s
        up[k] = max(_mul(s_plus, t_up) - fit.theta_hat, 0.0)
        dn[k] = max(fit.theta_hat - _mul(s_minus, t_dn), 0.0)
    return up, dn


def _mul(a: float, b: float) -> float:
    return 0.0 if a == 0 or b == 0 else a * b


def two_stage_sensitivity_bounds(sample, score: ScoreFamily, chi: ScaleScoreFamily,
                                 m: int, side: str = "two_sided",
                                 scheme_config: SchemeConfig | None = None):
    """``(lower, upper)`` bracket of the two-stage location m-sensitivity."""
    _check_side(side)
    sample = as_sample(sample)
    fit = solve_two_stage(sample, score, chi)
    lu, ld, _ = two_stage_scheme_sensitivity(sample, score, chi, m, scheme_config, fit)
    uu, ud = two_stage_upper_arrays(sample, score, chi, [m], fit)
    lower = SensitivityPoint(m, lu, ld, "lower_bound", sample.n)
    upper = SensitivityPoint(m, max(float(uu[0]), lu), max(float(ud[0]), ld),
                             "upper_bound", sample.n)
    return lower, upper


def two_stage_bp_bounds(sample, score: ScoreFamily, chi: ScaleScoreFamily, eta: float,
                        side: str = "two_sided", scheme_config: SchemeConfig | None = None):
    """``(lower, upper)`` bracket of the two-stage threshold breakdown point.

    The lower end is the first ``m`` whose certified sensitivity bound
    reaches ``eta``; the upper end is the first ``m`` at which an explicit
    contamination does.
    """
    if not eta > 0:
        raise DomainError("eta must be positive")
    side = _check_side(side)
    sample = as_sample(sample)
    n = sample.n
    fit = solve_two_stage(sample, score, chi)
    ms = np.arange(1, n + 1)
    uu, ud = two_stage_upper_arrays(sample, score, chi, ms, fit)
    pick = {"plus": uu, "minus": ud, "two_sided": np.maximum(uu, ud)}[side]
    m_low = _first_true(pick >= eta, ms)
    m_up = None
    for m in ms:
        lu, ld, _ = two_stage_scheme_sensitivity(sample, score, chi, int(m), scheme_config, fit)
        val = {"plus": lu, "minus": ld, "two_sided": max(lu, ld)}[side]
        if val >= eta:
            m_up = int(m)
            break
    if m_up is not None and (m_low is None or m_low > m_up):
        m_low = m_up
    return (BreakdownResult(eta, side, m_low, n, "lower_bound"),
            BreakdownResult(eta, side, m_up, n, "upper_bound"))


# ---------------------------------------------------------- standard errors

def _max_shift_gap(score: ScoreFamily, s: float) -> float:
    """``sup_x |psi'(x + s) - psi'(x)|`` for a single shift ``s >= 0``."""
    if s == 0:
        return 0.0
    d = score.delta
    f = lambda x: -abs(float(score.dpsi(x + s)) - float(score.dpsi(x)))
    grid = np.linspace(-s / 2 - 8 * d, -s / 2 + 8 * d, 1601)
    vals = np.abs(score.dpsi(grid + s) - score.dpsi(grid))
    k = int(np.argmax(vals))
    step = grid[1] - grid[0]
    res = minimize_scalar(f, bounds=(grid[k] - step, grid[k] + step), method="bounded",
                          options={"xatol": 1e-12})
    return max(float(vals[k]), -float(res.fun))


@lru_cache(maxsize=4096)
def curvature_gap(score: ScoreFamily, t: float) -> float:
    """Running maximum over shifts ``s <= t`` of ``sup_x |psi'(x+s) - psi'(x)|``."""
    if not t > 0:
        return 0.0
    if score.kind in ("identity", "sign"):
        return 0.0
    if score.kind == "huber":
        return float(score.dpsi(0.0))
    if math.isinf(t):
        return float(score.dpsi(0.0))
    cap = float(score.dpsi(0.0))
    best = 0.0
    for s in np.linspace(0.0, t, 41)[1:]:
        best = max(best, _max_shift_gap(score, float(s)))
        if best >= cap:
            return cap
    return min(best, cap)


def band_count_ranges(xs, theta_hat, lo_t, hi_t, delta):
    """For each interval ``[lo_t[k], hi_t[k]]`` return the min and max over
    ``theta`` in it of ``#{|x_i - theta| <= delta} - #{|x_i - theta_hat| <= delta}``.

    The count is piecewise constant with jumps at ``x_i +/- delta``, so it is
    evaluated at those points, the midpoints between them and the endpoints.
    """
    xs = np.asarray(xs, float)
    lo_t = np.atleast_1d(np.asarray(lo_t, float))
    hi_t = np.atleast_1d(np.asarray(hi_t, float))

    def count(t):
        t = np.asarray(t, float)
        lo = np.searchsorted(xs, t - delta, side="left")
        hi = np.searchsorted(xs, t + delta, side="right")
        return hi - lo

    base = int(count(theta_hat))
    bps = np.unique(np.concatenate([xs - delta, xs + delta]))
    pts = np.concatenate([bps, 0.5 * (bps[:-1] + bps[1:])])
    order = np.argsort(pts)
    pts = pts[order]
    cnt = count(pts)
    q_lo = np.empty(lo_t.size, dtype=int)
    q_hi = np.empty(lo_t.size, dtype=int)
    ends_lo, ends_hi = count(lo_t), count(hi_t)
    for k in range(lo_t.size):
        a = np.searchsorted(pts, lo_t[k], side="left")
        b = np.searchsorted(pts, hi_t[k], side="right")
        inner = cnt[a:b]
        # open gaps between the endpoints and the nearest breakpoints
        extra = [ends_lo[k], ends_hi[k]]
        if np.isfinite(lo_t[k]) and np.isfinite(hi_t[k]):
            edge_pts = [lo_t[k], hi_t[k]]
            if a < pts.size:
                edge_pts.append(0.5 * (lo_t[k] + min(pts[a], hi_t[k])))
            if b > 0:
                edge_pts.append(0.5 * (hi_t[k] + max(pts[b - 1], lo_t[k])))
            extra += list(count(np.array(edge_pts)))
        vals = np.concatenate([inner, extra])
        q_lo[k] = int(vals.min()) - base
        q_hi[k] = int(vals.max()) - base
    return q_lo, q_hi


def _envelope_numerators(score, xs, theta_hat, m, lo_t, hi_t):
    """Outer numerators: sup of the top ``n-m`` and inf of the bottom ``n-m``
    squared scores over admissible location shifts."""
    n = xs.size
    pts = [lo_t, hi_t]
    if score.kind == "huber":
        pts += list(xs - theta_hat - score.delta) + list(xs - theta_hat + score.delta)
    pts += list(xs - theta_hat)
    grid = np.unique(np.concatenate([np.linspace(lo_t, hi_t, 2001),
                                     [p for p in pts if lo_t <= p <= hi_t]]))
    H = np.sort(score.psi(xs[None, :] - theta_hat - grid[:, None]) ** 2, axis=1)
    top = m * score.psi_max ** 2 + H[:, m:].sum(axis=1)
    bottom = H[:, : n - m].sum(axis=1)

    def refine(vals, sign):
        k = int(np.argmax(sign * vals))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        if b <= a:
            return float(vals[k])

        def obj(t):
            h = np.sort(score.psi(xs - theta_hat - t) ** 2)
            v = m * score.psi_max ** 2 + h[m:].sum() if sign > 0 else h[: n - m].sum()
            return -sign * v

        r = minimize_scalar(obj, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
        return float(sign * max(sign * vals[k], -r.fun))

    return refine(top, 1.0), refine(bottom, -1.0)


def _count_s_plus(xs, theta_hat, ms, e_up, e_dn):
    n = xs.size
    v = 2.0 * xs - theta_hat
    first = np.minimum(n - ms, np.searchsorted(v, theta_hat + e_up, side="right"))
    second = n - np.maximum(ms, np.searchsorted(v, theta_hat - e_dn, side="left"))
    return np.maximum(np.maximum(first, second), 0)


def _count_s_minus(xs, theta_hat, ms, e_up, e_dn, rule):
    n = xs.size
    if rule == "printed":
        s = max(int(np.sum(xs >= theta_hat)), int(np.sum(xs <= theta_hat))) - ms
    elif rule == "corrected":
        right = np.where(e_up > 0, int(np.sum(xs > theta_hat)), 0)
        left = np.where(e_dn > 0, int(np.sum(xs < theta_hat)), 0)
        s = np.minimum(n - ms, np.maximum(right, left))
    else:
        raise DomainError(f"unknown rule {rule!r}")
    return np.maximum(s, 0)


def se_plugin_upper_arrays(sample, score: ScoreFamily, ms, theta_hat: float | None = None,
                           loc_up=None, loc_dn=None, s_minus_rule: str = "corrected",
                           envelope: bool = False):
    """Vectorised certified upper bounds on the plug-in SE sensitivities.

    Returns ``(eta_plus_bound, eta_minus_bound, se)``.  See
    :func:`se_plugin_sensitivity_upper` for the parameters.
    """
    sample = as_sample(sample)
    xs, n = sample.sorted, sample.n
    ms = _check_m(ms, n)
    if not score.bounded:
        raise DomainError("standard-error bounds need a bounded score")
    if theta_hat is None:
        theta_hat = solve_location(sample, score).theta_hat
    se = plugin_se(sample, score, theta_hat)
    if loc_up is None or loc_dn is None:
        loc_up, loc_dn = location_sensitivity_arrays(sample, score, ms, theta_hat)
    e_up = np.asarray(loc_up, float)
    e_dn = np.asarray(loc_dn, float)
    eta_loc = np.maximum(e_up, e_dn)
    r = xs - theta_hat
    rp = r[np.argsort(np.abs(r), kind="stable")]
    p2 = score.psi(rp) ** 2
    dp = score.dpsi(rp)
    tail_p2 = np.concatenate([np.cumsum(p2[::-1])[::-1], [0.0]])
    tail_dp = np.concatenate([np.cumsum(dp[::-1])[::-1], [0.0]])
    head_p2 = np.concatenate([[0.0], np.cumsum(p2)])
    head_dp = np.concatenate([[0.0], np.cumsum(dp)])
    d0 = float(score.dpsi(0.0))
    pmax2 = score.psi_max ** 2
    gap = np.array([curvature_gap(score, float(t)) for t in eta_loc])
    s_plus = _count_s_plus(xs, theta_hat, ms, e_up, e_dn)
    s_minus = _count_s_minus(xs, theta_hat, ms, e_up, e_dn, s_minus_rule)

    num_up = 5 * ms * pmax2 + tail_p2[ms]
    num_dn = np.maximum(head_p2[n - ms] - 4 * ms * pmax2, 0.0)
    if envelope:
        for k, m in enumerate(ms):
            if m == 0 or not np.isfinite(eta_loc[k]):
                continue
            top, bottom = _envelope_numerators(score, xs, theta_hat, int(m), -e_dn[k], e_up[k])
            num_up[k] = min(num_up[k], top)
            num_dn[k] = max(num_dn[k], bottom)

    den_up = np.maximum(tail_dp[ms] - s_plus * gap, 0.0)
    den_dn = ms * d0 + head_dp[n - ms] + s_minus * gap
    finite = np.isfinite(eta_loc)
    if score.kind == "huber" and finite.any():
        q_lo = np.zeros(ms.size)
        q_hi = np.zeros(ms.size)
        ql, qh = band_count_ranges(xs, theta_hat, theta_hat - e_dn[finite],
                                   theta_hat + e_up[finite], score.delta)
        q_lo[finite], q_hi[finite] = ql, qh
        den_up = np.where(finite, np.maximum(den_up, tail_dp[ms] + d0 * (q_lo - ms)), den_up)
        den_dn = np.where(finite, np.minimum(den_dn, ms * d0 + head_dp[n - ms] + d0 * (q_hi + ms)),
                          den_dn)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(den_up > 0, np.sqrt(num_up) / den_up - se, math.inf)
        dn = np.where(den_dn > 0, se - np.sqrt(num_dn) / den_dn, se)
    up = np.where(finite, up, math.inf)
    dn = np.where(finite, dn, se)
    up = np.where(ms == 0, 0.0, np.maximum(up, 0.0))
    dn = np.where(ms == 0, 0.0, np.clip(dn, 0.0, se))
    return up, dn, se


def se_plugin_sensitivity_upper(sample, score: ScoreFamily, m: int, side: str = "two_sided",
                                envelope: bool = False, theta_hat: float | None = None,
                                loc_eta: tuple | None = None,
                                s_minus_rule: str = "corrected") -> SensitivityPoint:
    """Certified upper bounds on the plug-in standard error m-sensitivities.

    Parameters
    ----------
    envelope : bool
        Replace the numerators by their optimised envelope over admissible
        location shifts.
    loc_eta : tuple, optional
        Precomputed ``(eta_plus, eta_minus)`` of the location estimate at ``m``.
    s_minus_rule : {"corrected", "printed"}
        How to count observations that can move closer to a shifted estimate.
        ``"corrected"`` counts the points on each side the estimate can move
        to, capped at ``n - m``; ``"printed"`` uses
        ``max(#{x >= theta}, #{x <= theta}) - m``, which can undercount.

    Notes
    -----
    For the Huber score the band-counting refinement is applied as well and
    the tighter of the two bounds is kept.
    """
    _check_side(side)
    sample = as_sample(sample)
    lu = ld = None
    if loc_eta is not None:
        lu, ld = [loc_eta[0]], [loc_eta[1]]
    up, dn, _ = se_plugin_upper_arrays(sample, score, [m], theta_hat, lu, ld,
                                       s_minus_rule, envelope)
    return SensitivityPoint(int(m), float(up[0]), float(dn[0]), "upper_bound", sample.n)


def _se_at(y: np.ndarray, score: ScoreFamily):
    try:
        t = solve_location(y, score).theta_hat
        return plugin_se(y, score, t)
    except (DegenerateError, ArithmeticError, ValueError):
        return None


def se_plugin_scheme_sensitivity(sample, score: ScoreFamily, m: int,
                                 scheme: SchemeConfig | None = None):
    """Largest plug-in SE inflation and deflation over explicit schemes.

    Besides the tail schemes, deflation also tries moving the ``m`` points
    farthest from the estimate onto it.
    """
    sample = as_sample(sample)
    scheme = scheme or SchemeConfig()
    xs = sample.sorted
    theta = solve_location(sample, score).theta_hat
    se = plugin_se(sample, score, theta)
    if m == 0:
        return 0.0, 0.0, {}
    cands = []
    for c in scheme.resolve(xs, "left"):
        cands.append(replace_extremes(xs, m, c, "low"))
    for c in scheme.resolve(xs, "right"):
        cands.append(replace_extremes(xs, m, c, "high"))
    if scheme.use_a_grid:
        up, dn = location_sensitivity_arrays(sample, score, [m], theta)
        ag = a_grid(score) * score.delta
        for a in ag:
            cands.append(replace_extremes(xs, m, theta + up[0] + a, "low"))
            cands.append(replace_extremes(xs, m, theta - dn[0] - a, "high"))
    far = np.argsort(-np.abs(xs - theta), kind="stable")[:m]
    y = np.array(xs)
    y[far] = theta
    cands.append(np.sort(y))
    best_up, best_dn, wit = 0.0, 0.0, {}
    for y in cands:
        s = _se_at(y, score)
        if s is None:
            continue
        if s - se > best_up:
            best_up, wit["plus"] = s - se, y
        if se - s > best_dn:
            best_dn, wit["minus"] = se - s, y
    return best_up, best_dn, wit


def se_plugin_sensitivity_bounds(sample, score: ScoreFamily, m: int, envelope: bool = False,
                                 scheme: SchemeConfig | None = None):
    sample = as_sample(sample)
    lu, ld, _ = se_plugin_scheme_sensitivity(sample, score, m, scheme)
    up = se_plugin_sensitivity_upper(sample, score, m, envelope=envelope)
    return (SensitivityPoint(m, lu, ld, "lower_bound", sample.n),
            SensitivityPoint(m, max(up.eta_plus, lu), max(up.eta_minus, ld),
                             "upper_bound", sample.n))


def se_restricted_arrays(sample, score: ScoreFamily, theta0: float, ms):
    """Exact restricted-SE sensitivities for all ``ms`` at once."""
    sample = as_sample(sample)
    ms = _check_m(ms, sample.n)
    n = sample.n
    r = sample.sorted - theta0
    rp = r[np.argsort(np.abs(r), kind="stable")]
    p2 = score.psi(rp) ** 2
    dp = score.dpsi(rp)
    num_all, den_all = p2.sum(), dp.sum()
    if den_all <= 0:
        raise DegenerateError("sum of score derivatives is zero at theta0")
    se = math.sqrt(num_all) / den_all
    tail_p2 = np.concatenate([np.cumsum(p2[::-1])[::-1], [0.0]])
    tail_dp = np.concatenate([np.cumsum(dp[::-1])[::-1], [0.0]])
    head_p2 = np.concatenate([[0.0], np.cumsum(p2)])
    head_dp = np.concatenate([[0.0], np.cumsum(dp)])
    d0 = float(score.dpsi(0.0))
    num_up = ms * score.psi_max ** 2 + tail_p2[ms]
    den_up = tail_dp[ms]
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(den_up > 0, np.sqrt(num_up) / den_up - se, math.inf)
        den_dn = head_dp[n - ms] + ms * d0
        dn = np.where(den_dn > 0, se - np.sqrt(head_p2[n - ms]) / den_dn, se)
    up = np.where(ms == 0, 0.0, np.maximum(up, 0.0))
    dn = np.where(ms == 0, 0.0, np.clip(dn, 0.0, se))
    return up, dn, se


def se_restricted_sensitivity(sample, score: ScoreFamily, theta0: float, m: int,
                              side: str = "two_sided") -> SensitivityPoint:
    """Exact m-sensitivities of the standard error evaluated at ``theta0``.

    Inflation sends the ``m`` observations closest to ``theta0`` to infinity;
    deflation moves the ``m`` farthest onto ``theta0``.
    """
    _check_side(side)
    if not score.bounded:
        raise DomainError("restricted standard-error sensitivity needs a bounded score")
    up, dn, _ = se_restricted_arrays(sample, score, theta0, [m])
    return SensitivityPoint(int(m), float(up[0]), float(dn[0]), "exact", as_sample(sample).n)


# -------------------------------------------------------------- dispatcher

@dataclass(frozen=True)
class EstimatorSpec:
    """What to audit: ``location``, ``scale``, ``two_stage``, ``se_plugin``
    or ``se_restricted``."""

    target: str
    score: ScoreFamily
    chi: ScaleScoreFamily | None = None
    theta0: float = 0.0
    envelope: bool = False
    scheme: SchemeConfig | None = None


def sensitivity_curve(sample, spec: EstimatorSpec, m_grid: Iterable[int] | None = None,
                      mode: str = "auto") -> SensitivityCurve:
    """Sensitivity curve over ``m_grid`` (default ``0..floor(n/2)``).

    Exact targets yield one point per ``m``; bounded targets yield a
    ``lower_bound`` and an ``upper_bound`` point per ``m``.
    """
    sample = as_sample(sample)
    n = sample.n
    ms = np.arange(n // 2 + 1) if m_grid is None else _check_m(list(m_grid), n)
    t = spec.target
    if t == "location":
        return location_sensitivity_curve(sample, spec.score, ms)
    if t == "scale":
        return scale_sensitivity_curve(sample, _need_chi(spec), ms)
    if t == "se_restricted":
        up, dn, _ = se_restricted_arrays(sample, spec.score, spec.theta0, ms)
        pts = [SensitivityPoint(int(m), float(u), float(d), "exact", n)
               for m, u, d in zip(ms, up, dn)]
        return SensitivityCurve(pts, n, "restricted standard error")
    if t == "two_stage":
        chi = _need_chi(spec)
        fit = solve_two_stage(sample, spec.score, chi)
        uu, ud = two_stage_upper_arrays(sample, spec.score, chi, ms, fit)
        pts = []
        for k, m in enumerate(ms):
            lu, ld, _ = two_stage_scheme_sensitivity(sample, spec.score, chi, int(m),
                                                     spec.scheme, fit)
            pts.append(SensitivityPoint(int(m), lu, ld, "lower_bound", n))
            pts.append(SensitivityPoint(int(m), max(uu[k], lu), max(ud[k], ld),
                                        "upper_bound", n))
        return SensitivityCurve(pts, n, "two-stage location")
    if t == "se_plugin":
        theta = solve_location(sample, spec.score).theta_hat
        up, dn = location_sensitivity_arrays(sample, spec.score, ms, theta)
        pts = []
        for k, m in enumerate(ms):
            lu, ld, _ = se_plugin_scheme_sensitivity(sample, spec.score, int(m), spec.scheme)
            ub = se_plugin_sensitivity_upper(sample, spec.score, int(m), envelope=spec.envelope,
                                             theta_hat=theta, loc_eta=(up[k], dn[k]))
            pts.append(SensitivityPoint(int(m), lu, ld, "lower_bound", n))
            pts.append(SensitivityPoint(int(m), max(ub.eta_plus, lu), max(ub.eta_minus, ld),
                                        "upper_bound", n))
        return SensitivityCurve(pts, n, "plug-in standard error")
    raise DomainError(f"unknown target {t!r}")


def _need_chi(spec: EstimatorSpec) -> ScaleScoreFamily:
    if spec.chi is None:
        raise DomainError(f"target {spec.target!r} needs a scale score")
    return spec.chi


def breakdown_from_curve(curve: SensitivityCurve, eta: float, side: str = "two_sided",
                         kind: str | None = None) -> BreakdownResult:
    """First ``m`` on the curve whose sensitivity reaches ``eta``."""
    side = _check_side(side)
    pts = [p for p in curve.points if kind is None or p.kind == kind]
    attr = {"plus": "eta_plus", "minus": "eta_minus", "two_sided": "eta_two_sided"}[side]
    for p in pts:
        if p.m > 0 and getattr(p, attr) >= eta:
            return BreakdownResult(eta, side, p.m, curve.n, pts[0].kind if pts else "exact")
    return BreakdownResult(eta, side, None, curve.n, pts[0].kind if pts else "exact")
