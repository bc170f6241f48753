"""Monotone location scores and their scale counterparts.

Every score is odd and nondecreasing with ``psi(0) = 0``.  Infinite arguments
are accepted everywhere and map to the limits of the score; this is how
contaminating points placed "at infinity" are represented in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .distributions import PopulationModel
from .errors import DomainError, ExtrapolationError

KINDS = ("huber", "logcosh", "self_concordant", "identity", "sign", "tabulated")
ROBUST_KINDS = ("huber", "logcosh", "self_concordant")

# Tuning constants giving 95% efficiency at the standard normal.
DEFAULT_DELTA = {"huber": 1.345, "logcosh": 1.2047, "self_concordant": 1.4811}

_ALIASES = {
    "huber": "huber",
    "logcosh": "logcosh",
    "log_cosh": "logcosh",
    "selfconcordant": "self_concordant",
    "self_concordant": "self_concordant",
    "self-concordant": "self_concordant",
    "pseudo_huber": "self_concordant",
    "identity": "identity",
    "mean": "identity",
    "sign": "sign",
    "median": "sign",
}


def _sc_psi(u):
    # psi(u) = 2u / (1 + sqrt(1 + 4u^2)), written to stay finite for huge |u|
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        small = 2.0 * a / (1.0 + np.sqrt(1.0 + 4.0 * a * a))
        inv = np.where(a > 0, 1.0 / np.where(a > 0, a, 1.0), 0.0)
        large = 2.0 / (inv + np.sqrt(inv * inv + 4.0))
    return np.sign(u) * np.where(a <= 1.0, small, large)


def _sc_dpsi(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore"):
        s = np.sqrt(1.0 + 4.0 * u * u)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 / (s * (s + 1.0))
    return np.where(np.isinf(u), 0.0, out)


def _sc_rho(u):
    u = np.asarray(u, dtype=float)
    s = np.sqrt(1.0 + 4.0 * u * u)
    return 0.5 * (s - 1.0 + np.log(2.0 / (s + 1.0)))


def _logcosh(u):
    a = np.abs(np.asarray(u, dtype=float))
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


@dataclass(frozen=True)
class ScoreFamily:
    """A location score ``psi`` with its analytic metadata.

    Parameters
    ----------
    kind : str
        One of ``huber``, ``logcosh``, ``self_concordant``, ``identity``,
        ``sign`` or ``tabulated``.
    delta : float
        Tuning constant.  The smooth families use ``psi_delta(t) = delta *
        psi(t / delta)``; Huber clips at ``delta``.
    deriv_convention : str
        Huber only.  ``"indicator"`` gives ``psi'(t) = 1{|t| <= delta}``;
        ``"delta_scaled"`` gives ``delta * 1{|t| <= delta}``.
    table : tuple, optional
        For ``tabulated``: ``(grid, values)`` on ``t >= 0`` with ``grid[0] = 0``
        and ``values[0] = 0``; the score is mirrored to be odd.
    flat_tails : bool
        For ``tabulated``: hold the last value beyond the grid instead of
        raising :class:`ExtrapolationError`.
    """

    kind: str
    delta: float = 1.0
    deriv_convention: str = "indicator"
    table: tuple | None = field(default=None, compare=False)
    flat_tails: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown score kind {self.kind!r}")
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if self.deriv_convention not in ("indicator", "delta_scaled"):
            raise DomainError(f"unknown derivative convention {self.deriv_convention!r}")
        if self.kind == "tabulated":
            if self.table is None:
                raise DomainError("tabulated score needs a (grid, values) table")
            grid, vals = (np.asarray(a, float) for a in self.table)
            if grid[0] != 0 or vals[0] != 0 or np.any(np.diff(grid) <= 0) \
                    or np.any(np.diff(vals) < 0):
                raise DomainError("table must start at (0, 0) and be increasing")
            object.__setattr__(self, "table", (tuple(grid), tuple(vals)))

    # construction helpers

    @classmethod
    def from_name(cls, name: str, delta: float | None = None,
                  efficiency: float | None = None, **kw) -> "ScoreFamily":
        """Build a family from a user-facing name.

        ``delta`` wins over ``efficiency``; if neither is given the 95%
        normal-efficiency constant is used for the robust families.
        """
        kind = _ALIASES.get(name.lower().replace(" ", "_"))
        if kind is None:
            raise DomainError(f"unknown loss {name!r}")
        if delta is None and kind in ROBUST_KINDS:
            if efficiency is not None:
                delta = tune_for_efficiency(kind, efficiency)
            else:
                delta = DEFAULT_DELTA[kind]
        return cls(kind, 1.0 if delta is None else float(delta), **kw)

    @classmethod
    def tabulated(cls, grid, values, flat_tails: bool = False) -> "ScoreFamily":
        return cls("tabulated", 1.0, table=(tuple(grid), tuple(values)),
                   flat_tails=flat_tails)

    # metadata

    @property
    def psi_pos_inf(self) -> float:
        if self.kind in ROBUST_KINDS:
            return self.delta
        if self.kind == "sign":
            return 1.0
        if self.kind == "identity":
            return math.inf
        if self.flat_tails:
            return self.table[1][-1]
        return math.inf

    @property
    def psi_neg_inf(self) -> float:
        return -self.psi_pos_inf

    @property
    def psi_max(self) -> float:
        return max(abs(self.psi_pos_inf), abs(self.psi_neg_inf))

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.psi_max)

    @property
    def lipschitz(self) -> float:
        if self.kind == "sign":
            return math.inf
        if self.kind == "tabulated":
            g, v = (np.asarray(a) for a in self.table)
            return float(np.max(np.diff(v) / np.diff(g)))
        return 1.0

    @property
    def dpsi_at_zero(self) -> float:
        return float(self.dpsi(0.0))

    @property
    def label(self) -> str:
        if self.kind in ROBUST_KINDS:
            return f"{self.kind}(delta={self.delta:g})"
        return self.kind

    # evaluation

    def psi(self, t):
        """Evaluate the score; accepts arrays and infinite entries."""
        t = np.asarray(t, dtype=float)
        d = self.delta
        if self.kind == "huber":
            return np.clip(t, -d, d)
        if self.kind == "logcosh":
            return d * np.tanh(t / d)
        if self.kind == "self_concordant":
            return d * _sc_psi(t / d)
        if self.kind == "identity":
            return t.copy() if t.ndim else t + 0.0
        if self.kind == "sign":
            return np.sign(t)
        return self._table_eval(t, derivative=False)

    def dpsi(self, t):
        """Almost-everywhere derivative under the configured convention."""
        t = np.asarray(t, dtype=float)
        d = self.delta
        if self.kind == "huber":
            scale = d if self.deriv_convention == "delta_scaled" else 1.0
            return scale * (np.abs(t) <= d).astype(float)
        if self.kind == "logcosh":
            with np.errstate(over="ignore"):
                c = np.cosh(t / d)
                return 1.0 / (c * c)
        if self.kind == "self_concordant":
            return _sc_dpsi(t / d)
        if self.kind == "identity":
            return np.ones_like(t)
        if self.kind == "sign":
            return np.zeros_like(t)
        return self._table_eval(t, derivative=True)

    def rho(self, t):
        """Loss whose derivative is ``psi`` (finite arguments only)."""
        t = np.asarray(t, dtype=float)
        d = self.delta
        if self.kind == "huber":
            a = np.abs(t)
            return np.where(a <= d, 0.5 * t * t, d * a - 0.5 * d * d)
        if self.kind == "logcosh":
            return d * d * _logcosh(t / d)
        if self.kind == "self_concordant":
            return d * d * _sc_rho(t / d)
        if self.kind == "identity":
            return 0.5 * t * t
        if self.kind == "sign":
            return np.abs(t)
        g, v = (np.asarray(a) for a in self.table)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(g))])
        a = np.abs(t)
        if not self.flat_tails and np.any(a > g[-1]):
            raise ExtrapolationError("tabulated score evaluated outside its grid")
        inside = np.minimum(a, g[-1])
        k = np.clip(np.searchsorted(g, inside, side="right") - 1, 0, len(g) - 2)
        slope = (v[k + 1] - v[k]) / (g[k + 1] - g[k])
        dt = inside - g[k]
        out = cum[k] + v[k] * dt + 0.5 * slope * dt * dt
        return out + np.maximum(a - g[-1], 0.0) * v[-1]

    def _table_eval(self, t, derivative):
        g, v = (np.asarray(a) for a in self.table)
        a = np.abs(t)
        finite = np.isfinite(a)
        if not self.flat_tails and np.any(finite & (a > g[-1])):
            raise ExtrapolationError("tabulated score evaluated outside its grid")
        if derivative:
            k = np.clip(np.searchsorted(g, a, side="right") - 1, 0, len(g) - 2)
            slope = (v[k + 1] - v[k]) / (g[k + 1] - g[k])
            return np.where(a > g[-1], 0.0, slope)
        if not self.flat_tails and np.any(~finite):
            return np.sign(t) * np.where(finite, np.interp(a, g, v), math.inf)
        return np.sign(t) * np.interp(np.where(finite, a, g[-1]), g, v)

    def __call__(self, t):
        return self.psi(t)


def evaluate(family: ScoreFamily, t):
    """Functional alias for :meth:`ScoreFamily.psi`."""
    return family.psi(t)


def derivative(family: ScoreFamily, t):
    """Functional alias for :meth:`ScoreFamily.dpsi`."""
    return family.dpsi(t)


@dataclass(frozen=True)
class ScaleScoreFamily:
    """Scale score ``chi(t) = psi(t)^2 - b`` built on a location score."""

    base: ScoreFamily
    fisher_constant: float

    @classmethod
    def from_base(cls, base: ScoreFamily, model: PopulationModel | None = None):
        return cls(base, fisher_constant(base, model))

    @property
    def b(self) -> float:
        return self.fisher_constant

    @property
    def chi_pos_inf(self) -> float:
        return self.base.psi_max ** 2 - self.fisher_constant

    @property
    def chi_at_zero(self) -> float:
        return -self.fisher_constant

    def chi(self, t):
        p = self.base.psi(t)
        return p * p - self.fisher_constant

    def __call__(self, t):
        return self.chi(t)


def scale_score(family: ScaleScoreFamily, t):
    return family.chi(t)


_STANDARD_NORMAL = PopulationModel.normal()


def _kinks(family: ScoreFamily):
    if family.kind == "huber":
        return (-family.delta, family.delta)
    if family.kind == "sign":
        return (0.0,)
    return ()


@lru_cache(maxsize=256)
def _fisher_cached(family: ScoreFamily, model: PopulationModel) -> float:
    return model.expect(lambda t: float(family.psi(t)) ** 2, points=_kinks(family))


def fisher_constant(family: ScoreFamily, model: PopulationModel | None = None) -> float:
    """Return ``b = E[psi(Z)^2]`` under ``model`` (standard normal by default)."""
    return _fisher_cached(family, model or _STANDARD_NORMAL)


def efficiency(family: ScoreFamily, model: PopulationModel | None = None) -> float:
    """Asymptotic efficiency ``E[psi']^2 / E[psi^2]`` relative to the mean."""
    model = model or _STANDARD_NORMAL
    pts = _kinks(family)
    if family.kind == "huber":
        d = family.delta
        slope = model.prob(-d, d)
    else:
        slope = model.expect(lambda t: float(family.dpsi(t)), points=pts)
    if family.kind == "huber" and family.deriv_convention == "delta_scaled":
        family = ScoreFamily("huber", family.delta)
    return slope ** 2 / fisher_constant(family, model)


def tune_for_efficiency(kind: str, target_eff: float,
                        model: PopulationModel | None = None) -> float:
    """Return the tuning constant reaching ``target_eff`` at ``model``.

    Efficiency is increasing in ``delta`` for the three robust families, so a
    bracketed root search on ``delta`` suffices.
    """
    kind = _ALIASES.get(kind, kind)
    if kind not in ROBUST_KINDS:
        raise DomainError(f"cannot tune a {kind!r} score")
    if not 0 < target_eff < 1:
        raise DomainError("target efficiency must lie in (0, 1)")
    model = model or _STANDARD_NORMAL

    def gap(d):
        return efficiency(ScoreFamily(kind, d), model) - target_eff

    lo, hi = 1e-3, 1.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise DomainError("target efficiency not reachable")
    return brentq(gap, lo, hi, xtol=1e-9, rtol=1e-12)
