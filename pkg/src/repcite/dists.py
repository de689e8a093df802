"""Log densities and samplers for the distributions used by the citation model.

All log-density functions are pure and vectorize over numpy arrays. Scalar
inputs give Python floats back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import betaln, gammaln, xlog1py, xlogy

LOG_2_OVER_PI = math.log(2.0 / math.pi)


class DomainError(ValueError):
    """A distribution parameter is outside its domain."""


class Family(str, Enum):
    NORMAL = "Normal"
    CAUCHY = "Cauchy"
    HALF_CAUCHY = "HalfCauchy"
    GAMMA = "Gamma"
    BETA = "Beta"
    BETA_PROPORTION = "BetaProportion"
    UNIFORM01 = "Uniform01"
    EXPONENTIAL = "Exponential"
    DIRICHLET = "Dirichlet"
    NEG_BINOMIAL2 = "NegBinomial2"
    ZINB = "ZINB"


_ARITY = {
    Family.NORMAL: 2,  # loc, scale
    Family.CAUCHY: 2,  # loc, scale
    Family.HALF_CAUCHY: 1,  # scale
    Family.GAMMA: 2,  # shape, rate
    Family.BETA: 2,  # a, b
    Family.BETA_PROPORTION: 2,  # mean, concentration
    Family.UNIFORM01: 0,
    Family.EXPONENTIAL: 1,  # mean
    Family.DIRICHLET: 2,  # concentration, K (symmetric)
    Family.NEG_BINOMIAL2: 2,  # mean, dispersion
    Family.ZINB: 3,  # gate, mean, dispersion
}


@dataclass(frozen=True)
class DistParams:
    """A distribution family together with its parameter vector.

    ``Exponential`` takes its *mean*; a positive-truncated Laplace at 0 with
    scale ``b`` is ``Exponential(b)``. ``Dirichlet`` is symmetric:
    ``(concentration, K)``.
    """

    family: Family
    params: tuple[float, ...] = ()

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(self.params) != _ARITY[fam]:
            raise DomainError(f"{fam.value} expects {_ARITY[fam]} parameters, got {len(self.params)}")
        _validate(fam, self.params)


def _require_positive(name: str, value) -> None:
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")


def _require_unit(name: str, value, *, closed: bool) -> None:
    v = np.asarray(value, dtype=float)
    bad = (v < 0) | (v > 1) if closed else (v <= 0) | (v >= 1)
    if np.any(~np.isfinite(v)) or np.any(bad):
        span = "[0, 1]" if closed else "(0, 1)"
        raise DomainError(f"{name} must lie in {span}, got {value!r}")


def _validate(fam: Family, p: tuple[float, ...]) -> None:
    if fam in (Family.NORMAL, Family.CAUCHY):
        _require_positive("scale", p[1])
    elif fam in (Family.HALF_CAUCHY, Family.EXPONENTIAL):
        _require_positive("scale" if fam is Family.HALF_CAUCHY else "mean", p[0])
    elif fam is Family.GAMMA:
        _require_positive("shape", p[0])
        _require_positive("rate", p[1])
    elif fam is Family.BETA:
        _require_positive("a", p[0])
        _require_positive("b", p[1])
    elif fam is Family.BETA_PROPORTION:
        _require_unit("mu", p[0], closed=False)
        _require_positive("kappa", p[1])
    elif fam is Family.DIRICHLET:
        _require_positive("alpha", p[0])
        if p[1] < 1 or p[1] != int(p[1]):
            raise DomainError(f"K must be a positive integer, got {p[1]!r}")
    elif fam is Family.NEG_BINOMIAL2:
        _require_positive("mu", p[0])
        _require_positive("phi", p[1])
    elif fam is Family.ZINB:
        _require_unit("gate", p[0], closed=True)
        _require_positive("mu", p[1])
        _require_positive("phi", p[2])


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def negbin2_logpmf(n, mu, phi):
    """NB2 log-mass with mean ``mu`` and dispersion ``phi`` (variance mu + mu^2/phi).

    The binomial coefficient is generalized through log-gamma so ``phi`` may
    be any positive real.
    """
    _require_positive("mu", mu)
    _require_positive("phi", phi)
    n = np.asarray(n, dtype=float)
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise DomainError(f"n must be a non-negative integer, got {n!r}")
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    log_mp = np.logaddexp(np.log(mu), np.log(phi))
    out = (
        gammaln(n + phi)
        - gammaln(phi)
        - gammaln(n + 1.0)
        + xlogy(n, mu)
        - n * log_mp
        + phi * (np.log(phi) - log_mp)
    )
    return _out(out)


def zinb_logpmf(n, gate, mu, phi):
    """Zero-inflated NB2 log-mass; ``gate`` is the structural-zero probability."""
    _require_unit("gate", gate, closed=True)
    nb = np.asarray(negbin2_logpmf(n, mu, phi), dtype=float)
    n = np.asarray(n, dtype=float)
    gate = np.asarray(gate, dtype=float)
    with np.errstate(divide="ignore"):
        log_gate = np.log(gate)
        log_open = np.log1p(-gate)
    zero = np.logaddexp(log_gate, log_open + nb)
    out = np.where(n == 0, zero, log_open + nb)
    return _out(out)


def beta_proportion_logpdf(theta, mu, kappa):
    """Beta log-density with shapes (mu*kappa, (1-mu)*kappa).

    At theta in {0, 1} the result is -inf unless the matching shape equals 1.
    A mean of exactly 0 or 1 is treated as degenerate and also gives -inf.
    """
    _require_positive("kappa", kappa)
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any((theta < 0) | (theta > 1)) or np.any((mu < 0) | (mu > 1)):
        return _out(np.full(np.broadcast(theta, mu, kappa).shape, -np.inf))
    a = mu * kappa
    b = (1.0 - mu) * kappa
    degenerate = (mu <= 0) | (mu >= 1)
    a_safe = np.where(degenerate, 1.0, a)
    b_safe = np.where(degenerate, 1.0, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xlogy(a_safe - 1.0, theta) + xlog1py(b_safe - 1.0, -theta) - betaln(a_safe, b_safe)
    at_zero = (theta == 0) & (a_safe != 1.0)
    at_one = (theta == 1) & (b_safe != 1.0)
    out = np.where(degenerate | at_zero | at_one | np.isnan(out), -np.inf, out)
    return _out(out)


def prior_logpdf(d: DistParams, x):
    """Normalized log-density of ``d`` at ``x``; -inf outside the support."""
    fam, p = d.family, d.params
    if fam is Family.DIRICHLET:
        return _dirichlet_logpdf(np.asarray(x, dtype=float), p[0], int(p[1]))
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam is Family.NORMAL:
            z = (x - p[0]) / p[1]
            out = -0.5 * z * z - math.log(p[1]) - 0.5 * math.log(2 * math.pi)
        elif fam is Family.CAUCHY:
            z = (x - p[0]) / p[1]
            out = -math.log(math.pi * p[1]) - np.log1p(z * z)
        elif fam is Family.HALF_CAUCHY:
            z = x / p[0]
            out = np.where(x >= 0, LOG_2_OVER_PI - math.log(p[0]) - np.log1p(z * z), -np.inf)
        elif fam is Family.GAMMA:
            shape, rate = p
            val = shape * math.log(rate) - gammaln(shape) + xlogy(shape - 1.0, x) - rate * x
            out = np.where(x > 0, val, -np.inf)
            if shape == 1.0:
                out = np.where(x == 0, math.log(rate), out)
        elif fam is Family.BETA:
            a, b = p
            val = xlogy(a - 1.0, x) + xlog1py(b - 1.0, -x) - betaln(a, b)
            inside = (x > 0) & (x < 1)
            edge0 = (x == 0) & (a == 1.0)
            edge1 = (x == 1) & (b == 1.0)
            out = np.where(inside | edge0 | edge1, val, -np.inf)
        elif fam is Family.BETA_PROPORTION:
            return beta_proportion_logpdf(x, p[0], p[1])
        elif fam is Family.UNIFORM01:
            out = np.where((x >= 0) & (x <= 1), 0.0, -np.inf)
        elif fam is Family.EXPONENTIAL:
            mean = p[0]
            out = np.where(x >= 0, -math.log(mean) - x / mean, -np.inf)
        elif fam is Family.NEG_BINOMIAL2:
            return negbin2_logpmf(x, p[0], p[1])
        elif fam is Family.ZINB:
            return zinb_logpmf(x, p[0], p[1], p[2])
        else:  # pragma: no cover - exhaustive over Family
            raise DomainError(f"unsupported family {fam}")
    return _out(out)


def _dirichlet_logpdf(x: np.ndarray, alpha: float, k: int) -> float:
    if x.shape[-1] != k:
        raise DomainError(f"Dirichlet point has {x.shape[-1]} components, expected {k}")
    if np.any(x < 0) or not np.allclose(x.sum(-1), 1.0, atol=1e-10):
        return -np.inf
    if k == 1:
        return 0.0
    with np.errstate(divide="ignore"):
        val = gammaln(k * alpha) - k * gammaln(alpha) + np.sum(xlogy(alpha - 1.0, x), axis=-1)
    return _out(np.where(np.isnan(val), -np.inf, val))


def sample(d: DistParams, rng: np.random.Generator, size=None):
    """Draw from ``d`` using the caller's generator."""
    fam, p = d.family, d.params
    if fam is Family.NORMAL:
        return rng.normal(p[0], p[1], size)
    if fam is Family.CAUCHY:
        return p[0] + p[1] * rng.standard_cauchy(size)
    if fam is Family.HALF_CAUCHY:
        return np.abs(p[0] * rng.standard_cauchy(size))
    if fam is Family.GAMMA:
        return rng.gamma(p[0], 1.0 / p[1], size)
    if fam is Family.BETA:
        return rng.beta(p[0], p[1], size)
    if fam is Family.BETA_PROPORTION:
        return rng.beta(p[0] * p[1], (1.0 - p[0]) * p[1], size)
    if fam is Family.UNIFORM01:
        return rng.uniform(0.0, 1.0, size)
    if fam is Family.EXPONENTIAL:
        return rng.exponential(p[0], size)
    if fam is Family.DIRICHLET:
        return rng.dirichlet(np.full(int(p[1]), p[0]), size)
    if fam is Family.NEG_BINOMIAL2:
        return sample_negbin2(rng, p[0], p[1], size)
    if fam is Family.ZINB:
        y = sample_negbin2(rng, p[1], p[2], size)
        structural = rng.uniform(size=size) < p[0]
        return np.where(structural, 0, y)
    raise DomainError(f"no sampler for family {fam}")  # pragma: no cover


# numpy's Poisson sampler rejects rates above ~1e18; beyond this the
# relative Poisson noise is below 1e-7 and rounding the rate is exact enough.
_POISSON_MAX = 1e15


def sample_negbin2(rng: np.random.Generator, mu, phi, size=None):
    """NB2 draws via the gamma-Poisson mixture."""
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    rate = rng.gamma(phi, mu / phi, size)
    rate = np.asarray(rate, dtype=float)
    big = rate > _POISSON_MAX
    draws = rng.poisson(np.where(big, 0.0, rate))
    out = np.where(big, np.round(rate), draws)
    return out if out.ndim else out.item()
