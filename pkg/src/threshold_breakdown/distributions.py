"""Population models used for Fisher constants, population targets and simulation.

A :class:`PopulationModel` bundles a density, CDF, quantile function and a
sampler, plus an adaptive quadrature helper for expectations of bounded
functions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.optimize import brentq

from .errors import NumericError

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 400


@dataclass(frozen=True)
class PopulationModel:
    """A univariate distribution with quadrature support.

    Parameters
    ----------
    kind : str
        One of ``"normal"``, ``"uniform"``, ``"cauchy"`` or ``"custom"``.
    params : tuple
        Location/scale style parameters, kept for reporting.
    cdf, pdf, ppf : callable
        Vectorised distribution functions.
    sampler : callable
        ``sampler(rng, size)`` returning i.i.d. draws.
    support : tuple of float
        Closed support ``(lo, hi)``; may be infinite.
    breakpoints : tuple of float
        Points where the density is not smooth (added to quadrature splits).
    """

    kind: str
    params: tuple
    cdf: Callable
    pdf: Callable
    ppf: Callable
    sampler: Callable
    support: tuple = (-np.inf, np.inf)
    breakpoints: tuple = field(default=())
    pdf_scalar: Callable | None = None

    @classmethod
    def normal(cls, mu: float = 0.0, sigma: float = 1.0) -> "PopulationModel":
        d = stats.norm(loc=mu, scale=sigma)
        c = 1.0 / (sigma * math.sqrt(2.0 * math.pi))

        def dens(t):
            z = (t - mu) / sigma
            return c * math.exp(-0.5 * z * z)

        return cls("normal", (mu, sigma), d.cdf, d.pdf, d.ppf,
                   lambda rng, size: rng.normal(mu, sigma, size), pdf_scalar=dens)

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0) -> "PopulationModel":
        d = stats.uniform(loc=a, scale=b - a)
        height = 1.0 / (b - a)
        return cls("uniform", (a, b), d.cdf, d.pdf, d.ppf,
                   lambda rng, size: rng.uniform(a, b, size), support=(a, b),
                   pdf_scalar=lambda t: height if a <= t <= b else 0.0)

    @classmethod
    def cauchy(cls, loc: float = 0.0, scale: float = 1.0) -> "PopulationModel":
        d = stats.cauchy(loc=loc, scale=scale)
        return cls("cauchy", (loc, scale), d.cdf, d.pdf, d.ppf,
                   lambda rng, size: loc + scale * rng.standard_cauchy(size),
                   pdf_scalar=lambda t: 1.0 / (math.pi * scale * (1.0 + ((t - loc) / scale) ** 2)))

    @classmethod
    def normal_mixture(cls, weights: Sequence[float], means: Sequence[float],
                       sds: Sequence[float]) -> "PopulationModel":
        """Finite mixture of normals; the quantile is found by root search."""
        w = np.asarray(weights, float)
        w = w / w.sum()
        mu = np.asarray(means, float)
        sd = np.asarray(sds, float)

        def cdf(x):
            x = np.asarray(x, float)
            return np.sum(w * stats.norm.cdf((x[..., None] - mu) / sd), axis=-1)

        def pdf(x):
            x = np.asarray(x, float)
            return np.sum(w * stats.norm.pdf((x[..., None] - mu) / sd) / sd, axis=-1)

        lo_all = float(np.min(mu - 40 * sd))
        hi_all = float(np.max(mu + 40 * sd))

        def ppf(u):
            u = np.atleast_1d(np.asarray(u, float))
            out = np.empty_like(u)
            for k, uk in enumerate(u):
                if uk <= 0:
                    out[k] = -np.inf
                elif uk >= 1:
                    out[k] = np.inf
                else:
                    out[k] = brentq(lambda t: float(cdf(t)) - uk, lo_all, hi_all,
                                    xtol=1e-14, rtol=1e-14)
            return out if out.size > 1 else out[0]

        def sampler(rng, size):
            comp = rng.choice(len(w), size=size, p=w)
            return rng.normal(mu[comp], sd[comp])

        return cls("custom", (tuple(w), tuple(mu), tuple(sd)), cdf, pdf, ppf, sampler,
                   breakpoints=tuple(mu))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.asarray(self.sampler(rng, size), dtype=float)

    def expect(self, g: Callable[[float], float], lo: float = -np.inf, hi: float = np.inf,
               points: Sequence[float] = ()) -> float:
        """Return ``E[g(X) 1{lo < X < hi}]`` by adaptive quadrature.

        ``points`` lists locations where ``g`` has kinks or jumps; the domain
        is split there so each piece is smooth.
        """
        a = max(lo, self.support[0])
        b = min(hi, self.support[1])
        if not a < b:
            return 0.0
        cuts = sorted({float(p) for p in tuple(points) + tuple(self.breakpoints)
                       if a < p < b and np.isfinite(p)})
        edges = [a] + cuts + [b]
        dens = self.pdf_scalar or (lambda t: float(self.pdf(t)))
        total = 0.0
        for left, right in zip(edges[:-1], edges[1:]):
            if right <= left:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    val, err = integrate.quad(lambda t: g(t) * dens(t), left, right,
                                              epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                                              limit=QUAD_LIMIT)
                except integrate.IntegrationWarning as w:
                    raise NumericError(f"quadrature failed on [{left}, {right}]: {w}") from None
            if not np.isfinite(val) or err > 1e-8:
                raise NumericError(
                    f"quadrature did not converge on [{left}, {right}]: "
                    f"value={val}, error estimate={err}")
            total += val
        return total

    def prob(self, lo: float = -np.inf, hi: float = np.inf) -> float:
        """Return ``P(lo < X <= hi)``."""
        if hi <= lo:
            return 0.0
        return float(self.cdf(hi)) - float(self.cdf(lo))
