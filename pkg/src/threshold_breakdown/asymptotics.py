"""Population targets for the location m-sensitivity and breakdown point.

Under a model ``F`` the contamination level ``eps`` and the population
sensitivity ``eta`` are linked through the tail-trimmed equations

    H+(eta) = int_{q_eps}^inf psi(x - theta0 - eta) dF + eps * B = 0
    H-(eta) = int_{-inf}^{q_{1-eps}} psi(x - theta0 + eta) dF - eps * B = 0

with ``B = sup |psi|``.  This module solves them directly, integrates the
equivalent ODE in ``eps``, inverts the map to get a population breakdown
point, and assembles the asymptotic variances of the empirical estimators
from the coupled estimating system in ``(theta, eta, q, eps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .distributions import PopulationModel
from .errors import DomainError, ExtrapolationError, NumericError
from .estimators import WeightedSample, as_sample
from .score import ScoreFamily

EPS_CAP = 0.499
ROOT_TOL = 1e-12
SINGULAR_TOL = 1e-12
VARIANCE_XTOL = 1e-9


def _sign(side: str) -> float:
    if side in ("plus", "+"):
        return 1.0
    if side in ("minus", "-"):
        return -1.0
    raise DomainError(f"side must be 'plus' or 'minus', got {side!r}")


def _kinks(score: ScoreFamily, shift: float):
    if score.kind == "huber":
        return (shift - score.delta, shift + score.delta)
    return (shift,)


def _need_bounded(score: ScoreFamily):
    if not score.bounded:
        raise DomainError("population sensitivities need a bounded score")


def _tail(model: PopulationModel, g, q: float, sign: float, shift: float, score):
    """``int_q^inf g dF`` (plus side) or ``int_{-inf}^q g dF`` (minus side)."""
    pts = _kinks(score, shift)
    if sign > 0:
        return model.expect(g, lo=q, points=pts)
    return model.expect(g, hi=q, points=pts)


def population_location(model: PopulationModel, score: ScoreFamily) -> float:
    """Zero of ``theta -> E psi(X - theta)``."""
    med = float(model.ppf(0.5))
    f = lambda th: model.expect(lambda x: float(score.psi(x - th)), points=_kinks(score, th))
    lo, hi = med - 1.0, med + 1.0
    while f(lo) < 0:
        lo -= 2.0 * (hi - lo)
    while f(hi) > 0:
        hi += 2.0 * (hi - lo)
    return brentq(f, lo, hi, xtol=ROOT_TOL, rtol=1e-14)


def _quantile(model, eps, sign):
    return float(model.ppf(eps if sign > 0 else 1.0 - eps))


def H(model: PopulationModel, score: ScoreFamily, eps: float, eta: float, side: str = "plus",
      theta0: float | None = None) -> float:
    """Trimmed population equation for the given side, evaluated at ``eta``."""
    sign = _sign(side)
    theta0 = population_location(model, score) if theta0 is None else theta0
    q = _quantile(model, eps, sign)
    c = theta0 + sign * eta
    val = _tail(model, lambda x: float(score.psi(x - c)), q, sign, c, score)
    return val + sign * eps * score.psi_max


def _check_eps(eps):
    if not 0 < eps < 0.5:
        raise DomainError("eps must lie in (0, 0.5)")
    if eps > EPS_CAP:
        raise ExtrapolationError(f"eps={eps} is too close to 0.5; the sensitivity diverges")


def population_sensitivity(model: PopulationModel, score: ScoreFamily, eps: float,
                           side: str = "plus", theta0: float | None = None) -> float:
    """Population sensitivity: the zero of ``H+`` (or ``H-``) in ``eta >= 0``."""
    _need_bounded(score)
    _check_eps(eps)
    sign = _sign(side)
    theta0 = population_location(model, score) if theta0 is None else theta0
    g = lambda eta: sign * H(model, score, eps, eta, side, theta0)
    if g(0.0) <= 0:
        return 0.0
    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
        if hi > 1e8:
            raise NumericError("population sensitivity did not bracket")
    return brentq(g, 0.0, hi, xtol=ROOT_TOL, rtol=1e-14)


def _slope(model, score, eps, eta, sign, theta0):
    """``d eta / d eps`` at ``(eps, eta)`` from the implicit function theorem."""
    q = _quantile(model, eps, sign)
    c = theta0 + sign * eta
    num = score.psi_max - sign * float(score.psi(q - c))
    den = _tail(model, lambda x: float(score.dpsi(x - c)), q, sign, c, score)
    if den < SINGULAR_TOL:
        raise NumericError("maxbias ODE is singular: tail integral of psi' vanishes")
    return num / den


def maxbias_derivative(model: PopulationModel, score: ScoreFamily, eps: float,
                       side: str = "plus", eta: float | None = None,
                       theta0: float | None = None) -> float:
    """Closed-form slope ``d eta_eps / d eps`` of the maxbias curve."""
    sign = _sign(side)
    theta0 = population_location(model, score) if theta0 is None else theta0
    if eta is None:
        eta = population_sensitivity(model, score, eps, side, theta0)
    return _slope(model, score, eps, eta, sign, theta0)


@dataclass(frozen=True)
class MaxbiasCurve:
    epsilons: np.ndarray
    eta_plus: np.ndarray
    eta_minus: np.ndarray
    deriv_plus: np.ndarray
    deriv_minus: np.ndarray

    @property
    def derivative(self):
        return self.deriv_plus, self.deriv_minus

    def rows(self):
        return [(float(e), float(a), float(b), float(c), float(d))
                for e, a, b, c, d in zip(self.epsilons, self.eta_plus, self.eta_minus,
                                         self.deriv_plus, self.deriv_minus)]


def _rk4(f, h, steps, seed):
    eps = np.arange(steps + 1) * h
    eta = np.zeros(steps + 1)
    d = np.zeros(steps + 1)
    d[0] = f(0.0, 0.0)
    # The right-hand side is not smooth at eps = 0 when psi' has unbounded
    # support (q_eps -> -inf faster than psi' decays), so the first step is
    # taken by a direct root solve.
    eta[1] = seed(h)
    d[1] = f(h, eta[1])
    for k in range(1, steps):
        t, y = eps[k], eta[k]
        k1 = d[k]
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        eta[k + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        d[k + 1] = f(eps[k + 1], eta[k + 1])
    return eps, eta, d


def maxbias_curve(model: PopulationModel, score: ScoreFamily, eps_max: float = 0.45,
                  step: float = 1e-3) -> MaxbiasCurve:
    """Integrate the maxbias ODE for both sides by classical RK4.

    The curve starts at ``eta(0) = 0``; at ``eps = 0`` the slope reduces to
    ``(B - psi(q_0 - theta0)) / E psi'(X - theta0)``, which is ``2B / E psi'``
    for models with unbounded support.
    """
    _need_bounded(score)
    if not 0 < eps_max <= EPS_CAP:
        raise DomainError(f"eps_max must lie in (0, {EPS_CAP}]")
    if not 0 < step <= eps_max:
        raise DomainError("step must lie in (0, eps_max]")
    theta0 = population_location(model, score)
    steps = int(round(eps_max / step))
    h = eps_max / steps
    out = []
    for sign, side in ((1.0, "plus"), (-1.0, "minus")):
        f = lambda t, y, s=sign: _slope(model, score, t, y, s, theta0)
        seed = lambda e, sd=side: population_sensitivity(model, score, e, sd, theta0)
        out.append(_rk4(f, h, steps, seed))
    eps, up, dup = out[0]
    _, dn, ddn = out[1]
    return MaxbiasCurve(eps, up, dn, dup, ddn)


def population_bp(model: PopulationModel, score: ScoreFamily, eta: float,
                  side: str = "plus", theta0: float | None = None) -> float:
    """Contamination level whose population sensitivity equals ``eta``."""
    if not eta > 0:
        raise DomainError("eta must be positive")
    theta0 = population_location(model, score) if theta0 is None else theta0
    top = population_sensitivity(model, score, EPS_CAP, side, theta0)
    if eta > top:
        raise ExtrapolationError(f"eta={eta} exceeds the curve range {top:.6g} at eps={EPS_CAP}")
    g = lambda e: population_sensitivity(model, score, e, side, theta0) - eta
    lo = 1e-9
    if g(lo) >= 0:
        return lo
    return brentq(g, lo, EPS_CAP, xtol=1e-13, rtol=1e-14)


# ---------------------------------------------------------------- variances

@dataclass(frozen=True)
class ZConstants:
    """Population ingredients of the coupled system at ``(theta0, eta, q, eps)``."""

    side: str
    eps: float
    theta0: float
    eta: float
    q: float
    a: float
    b: float
    c: float
    d: float
    psi_q: float
    second_moments: np.ndarray

    @property
    def jacobian(self) -> np.ndarray:
        a, b, c, d = self.a, self.b, self.c, self.d
        if self.side == "plus":
            return np.array([[-a, 0, 0], [-b, -b, -c], [0, 0, d]], float)
        return np.array([[-a, 0, 0], [-b, b, c], [0, 0, d]], float)


def z_constants(model: PopulationModel, score: ScoreFamily, eps: float,
                side: str = "plus", eta: float | None = None) -> ZConstants:
    sign = _sign(side)
    theta0 = population_location(model, score)
    if eta is None:
        eta = population_sensitivity(model, score, eps, side, theta0)
    q = _quantile(model, eps, sign)
    c_shift = theta0 + sign * eta
    B = score.psi_max
    base = _kinks(score, theta0) + _kinks(score, c_shift)
    a = model.expect(lambda x: float(score.dpsi(x - theta0)), points=base)
    b = _tail(model, lambda x: float(score.dpsi(x - c_shift)), q, sign, c_shift, score)
    psi_q = float(score.psi(q - c_shift))
    dens = float(model.pdf(q))
    m11 = model.expect(lambda x: float(score.psi(x - theta0)) ** 2, points=base)
    tail_kw = {"lo": q} if sign > 0 else {"hi": q}
    m12 = model.expect(lambda x: float(score.psi(x - theta0)) * float(score.psi(x - c_shift)),
                       points=base, **tail_kw)
    level = eps if sign > 0 else 1.0 - eps
    below = model.expect(lambda x: float(score.psi(x - theta0)), hi=q, points=base)
    m13 = below - level * model.expect(lambda x: float(score.psi(x - theta0)), points=base)
    m22 = model.expect(lambda x: float(score.psi(x - c_shift)) ** 2, points=base,
                       **tail_kw) - (eps * B) ** 2
    m23 = eps * eps * B
    m33 = eps * (1.0 - eps)
    M = np.array([[m11, m12, m13], [m12, m22, m23], [m13, m23, m33]])
    return ZConstants(side, eps, theta0, eta, q, a, b, psi_q * dens, dens, psi_q, M)


def asymptotic_variance_sensitivity(model: PopulationModel, score: ScoreFamily, eps: float,
                                    side: str = "plus", route: str = "sandwich",
                                    eta: float | None = None) -> float:
    """Asymptotic variance of ``sqrt(n) (eta_hat - eta_eps)`` for one side.

    ``route="sandwich"`` inverts the Jacobian of the coupled system;
    ``route="expanded"`` uses the six-term scalar expansion.  Both must agree.
    """
    _need_bounded(score)
    _check_eps(eps)
    z = z_constants(model, score, eps, side, eta)
    if min(z.a, z.b, z.d) <= 0:
        raise NumericError("singular derivative matrix: a, b or the quantile density vanishes")
    if route not in ("sandwich", "expanded"):
        raise DomainError(f"unknown route {route!r}")
    Ji = np.linalg.inv(z.jacobian)
    sandwich = float((Ji @ z.second_moments @ Ji.T)[1, 1])
    expanded = _expanded_variance(z, score.psi_max)
    if abs(sandwich - expanded) > VARIANCE_XTOL * max(1.0, abs(sandwich)):
        raise NumericError(f"variance routes disagree: sandwich={sandwich}, expanded={expanded}")
    val = sandwich if route == "sandwich" else expanded
    if not val > 0:
        raise NumericError(f"nonpositive asymptotic variance {val}")
    return val


def _expanded_variance(z: ZConstants, B: float) -> float:
    M = z.second_moments
    a, b, eps = z.a, z.b, z.eps
    # p carries the side: the q-column of the inverse Jacobian is -c/(b d) on both sides.
    p = -z.psi_q if z.side == "plus" else z.psi_q
    return (M[0, 0] / a ** 2
            + M[1, 1] / b ** 2
            + eps * (1 - eps) * p ** 2 / b ** 2
            - 2 * M[0, 1] / (a * b)
            + 2 * p * M[0, 2] / (a * b)
            - 2 * p * eps ** 2 * B / b ** 2)


def asymptotic_variance_bp(model: PopulationModel, score: ScoreFamily, eps_star: float,
                           side: str = "plus") -> float:
    """Asymptotic variance of ``sqrt(n) (BP_hat - eps_star)`` at ``eta = eta_{eps_star}``."""
    sign = _sign(side)
    z = z_constants(model, score, eps_star, side)
    V = asymptotic_variance_sensitivity(model, score, eps_star, side, eta=z.eta)
    e = score.psi_max - sign * z.psi_q
    if not e > 0:
        raise NumericError("model violates the positivity needed for the breakdown variance")
    return (z.b / e) ** 2 * V


# ------------------------------------------------------------------ Z-system

@dataclass(frozen=True)
class ZState:
    theta: float
    eta: float
    q: float
    epsilon: float

    def __post_init__(self):
        for v in (self.theta, self.eta, self.q, self.epsilon):
            if not math.isfinite(v):
                raise DomainError("Z-system state must be finite")


def zsystem_residual(empirical, state: ZState, side: str, score: ScoreFamily) -> np.ndarray:
    """Empirical mean of the coupled score vector at ``state``."""
    sign = _sign(side)
    if isinstance(empirical, WeightedSample):
        x, w = empirical.sorted_values, empirical.weights
    else:
        x = as_sample(empirical).sorted
        w = np.full(x.size, 1.0 / x.size)
    th, eta, q, eps = state.theta, state.eta, state.q, state.epsilon
    B = score.psi_max
    r1 = float(np.sum(w * score.psi(x - th)))
    if sign > 0:
        r2 = float(np.sum(w * score.psi(x - th - eta) * (x > q))) + eps * B
        r3 = float(np.sum(w * (x <= q))) - eps
    else:
        r2 = float(np.sum(w * score.psi(x - th + eta) * (x < q))) - eps * B
        r3 = float(np.sum(w * (x <= q))) - (1.0 - eps)
    return np.array([r1, r2, r3])


def _q_mid(xs, k):
    """Midpoint of ``[x_(k), x_(k+1))`` with the outer order statistics at +/- infinity."""
    lo = xs[k - 1] if k >= 1 else -math.inf
    hi = xs[k] if k < xs.size else math.inf
    if math.isinf(lo):
        return hi - 1.0
    if math.isinf(hi):
        return lo + 1.0
    return 0.5 * (lo + hi)


def sensitivity_state(sample, score: ScoreFamily, m: int, side: str = "plus") -> ZState:
    """State built from the estimate, its exact sensitivity and a trimming quantile."""
    from .estimators import solve_location
    from .sensitivity import location_sensitivity_arrays

    sample = as_sample(sample)
    xs, n = sample.sorted, sample.n
    th = solve_location(sample, score).theta_hat
    up, dn = location_sensitivity_arrays(sample, score, [m], th)
    if _sign(side) > 0:
        return ZState(th, float(up[0]), _q_mid(xs, m), m / n)
    return ZState(th, float(dn[0]), _q_mid(xs, n - m), m / n)


def breakdown_state(sample, score: ScoreFamily, eta: float, side: str = "plus") -> ZState | None:
    """State built from the estimate, a threshold and its one-sided breakdown point."""
    from .estimators import solve_location
    from .sensitivity import location_bp

    sample = as_sample(sample)
    xs, n = sample.sorted, sample.n
    th = solve_location(sample, score).theta_hat
    res = location_bp(sample, score, th, eta, "plus" if _sign(side) > 0 else "minus")
    if res.m is None:
        return None
    k = res.m
    q = _q_mid(xs, k) if _sign(side) > 0 else _q_mid(xs, n - k)
    return ZState(th, eta, q, k / n)
