import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from repcite import dists
from repcite.dists import DistParams, DomainError, Family
from tests import oracles


# -- negative binomial --------------------------------------------------------

def test_negbin2_closed_forms():
    assert_allclose(dists.negbin2_logpmf(0, 1.0, 1.0), math.log(0.5), rtol=1e-14)
    assert_allclose(dists.negbin2_logpmf(3, 1.0, 1.0), math.log(1 / 16), rtol=1e-14)


def test_negbin2_matches_high_precision_reference():
    # frozen from oracles.nb2_logpmf_mp(5, 438, 0.5)
    frozen = -4.796000721453079
    assert_allclose(oracles.nb2_logpmf_mp(5, 438, 0.5), frozen, rtol=1e-14)
    assert_allclose(dists.negbin2_logpmf(5, 438.0, 0.5), frozen, rtol=1e-12)


@pytest.mark.parametrize("n,mu,phi", [(0, 0.3, 0.2), (7, 12.5, 3.3), (40, 2.0, 50.0), (1000, 900.0, 0.7)])
def test_negbin2_against_mpmath(n, mu, phi):
    assert_allclose(dists.negbin2_logpmf(n, mu, phi), oracles.nb2_logpmf_mp(n, mu, phi), rtol=1e-11)


def test_negbin2_normalizes():
    rng = np.random.default_rng(0)
    for _ in range(200):
        mu = rng.uniform(0.1, 1000.0)
        phi = rng.uniform(0.1, 50.0)
        # Chebyshev-style tail bound: mean + 60 sd (and at least a few hundred)
        sd = math.sqrt(mu + mu * mu / phi)
        n_max = int(mu + 60 * sd + 500)
        n = np.arange(n_max + 1)
        total = np.exp(dists.negbin2_logpmf(n, mu, phi)).sum()
        assert 1 - 1e-6 <= total <= 1 + 1e-12


def test_negbin2_poisson_limit():
    n = np.arange(51)
    for mu in (0.5, 3.0, 11.0, 20.0):
        assert np.max(np.abs(dists.negbin2_logpmf(n, mu, 1e8) - stats.poisson.logpmf(n, mu))) < 1e-4


@pytest.mark.parametrize("bad", [dict(mu=0.0), dict(mu=-1.0), dict(phi=0.0), dict(mu=math.nan), dict(phi=math.inf)])
def test_negbin2_domain_errors_name_parameter(bad):
    args = dict(mu=2.0, phi=1.0) | bad
    with pytest.raises(DomainError, match=next(iter(bad))):
        dists.negbin2_logpmf(1, args["mu"], args["phi"])


# -- zero-inflated ---------------------------------------------------------------

def test_zinb_examples():
    assert dists.zinb_logpmf(0, 1.0, 7.0, 2.0) == 0.0
    assert_allclose(dists.zinb_logpmf(0, 0.5, 1.0, 1.0), math.log(0.75), rtol=1e-14)
    assert dists.zinb_logpmf(3, 1.0, 7.0, 2.0) == -math.inf
    assert_allclose(dists.zinb_logpmf(4, 0.3, 2.0, 3.0), math.log(0.7) + dists.negbin2_logpmf(4, 2.0, 3.0), rtol=1e-14)


def test_zinb_monte_carlo_frequency():
    # long-run frequency of n=4 under the zero-inflation process
    rng = np.random.default_rng(1)
    m = 10_000_000
    structural = rng.uniform(size=m) < 0.3
    draws = dists.sample_negbin2(rng, np.full(m, 2.0), np.full(m, 3.0))
    freq = np.mean((draws == 4) & ~structural)
    p = math.exp(dists.zinb_logpmf(4, 0.3, 2.0, 3.0))
    assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / m)


@given(
    n=st.integers(0, 300),
    mu=st.floats(1e-3, 1e4),
    phi=st.floats(1e-2, 1e3),
)
def test_zinb_gate_zero_reduces_to_nb(n, mu, phi):
    assert_allclose(dists.zinb_logpmf(n, 0.0, mu, phi), dists.negbin2_logpmf(n, mu, phi), rtol=1e-12)


@pytest.mark.parametrize("gate", [-0.1, 1.5, math.nan])
def test_zinb_gate_domain(gate):
    with pytest.raises(DomainError, match="gate"):
        dists.zinb_logpmf(0, gate, 1.0, 1.0)


# -- beta proportion ---------------------------------------------------------------

def test_beta_proportion_examples():
    for theta in (0.01, 0.3, 0.99):
        assert_allclose(dists.beta_proportion_logpdf(theta, 0.5, 2.0), 0.0, atol=1e-14)
    assert_allclose(dists.beta_proportion_logpdf(0.5, 0.5, 4.0), math.log(1.5), rtol=1e-14)


def test_beta_proportion_quadrature_oracle():
    ref, total = oracles.beta_proportion_logpdf_quad(0.2, 0.3, 7.0)
    assert abs(total - 1.0) < 1e-8
    assert_allclose(dists.beta_proportion_logpdf(0.2, 0.3, 7.0), ref, rtol=1e-12)


def test_beta_proportion_equals_beta():
    rng = np.random.default_rng(2)
    for _ in range(100):
        theta, mu = rng.uniform(0.001, 0.999, 2)
        kappa = rng.uniform(0.05, 200.0)
        expected = stats.beta.logpdf(theta, mu * kappa, (1 - mu) * kappa)
        assert_allclose(dists.beta_proportion_logpdf(theta, mu, kappa), expected, rtol=1e-12)


def test_beta_proportion_boundaries_return_neg_inf():
    assert dists.beta_proportion_logpdf(0.0, 0.2, 1.0) == -math.inf  # shape a = 0.2 < 1
    assert dists.beta_proportion_logpdf(1.0, 0.2, 1.0) == -math.inf
    assert dists.beta_proportion_logpdf(0.5, 0.0, 1.0) == -math.inf
    assert dists.beta_proportion_logpdf(0.5, 1.0, 1.0) == -math.inf
    assert not math.isnan(dists.beta_proportion_logpdf(0.0, 0.5, 2.0))


# -- priors ---------------------------------------------------------------------------

def test_prior_logpdf_examples():
    frozen = 1.382813229233738  # oracles.gamma_logpdf_mp(1, 100, 100)
    assert_allclose(oracles.gamma_logpdf_mp(1, 100, 100), frozen, rtol=1e-14)
    assert_allclose(dists.prior_logpdf(DistParams(Family.GAMMA, (100, 100)), 1.0), frozen, rtol=1e-12)
    assert_allclose(dists.prior_logpdf(DistParams(Family.HALF_CAUCHY, (1.0,)), 0.0), math.log(2 / math.pi), rtol=1e-14)
    d = DistParams(Family.DIRICHLET, (1.0, 3))
    for x in ([1 / 3, 1 / 3, 1 / 3], [0.1, 0.2, 0.7]):
        assert_allclose(dists.prior_logpdf(d, np.array(x)), math.log(2.0), rtol=1e-14)


def test_gamma_mode():
    d = DistParams(Family.GAMMA, (100, 100))
    grid = np.linspace(0.9, 1.1, 20001)
    assert_allclose(grid[np.argmax(dists.prior_logpdf(d, grid))], 0.99, atol=1e-5)


@pytest.mark.parametrize(
    "d,ref",
    [
        (DistParams(Family.NORMAL, (0.3, 2.0)), stats.norm(0.3, 2.0)),
        (DistParams(Family.CAUCHY, (0.0, 1.0)), stats.cauchy(0.0, 1.0)),
        (DistParams(Family.HALF_CAUCHY, (5.0,)), stats.halfcauchy(0.0, 5.0)),
        (DistParams(Family.GAMMA, (1.0, 20.0)), stats.gamma(1.0, scale=1 / 20)),
        (DistParams(Family.BETA, (1.0, 10.0)), stats.beta(1.0, 10.0)),
        (DistParams(Family.EXPONENTIAL, (10 / 6,)), stats.expon(scale=10 / 6)),
        (DistParams(Family.UNIFORM01), stats.uniform()),
    ],
)
def test_prior_logpdf_matches_scipy(d, ref):
    x = ref.ppf(np.linspace(0.01, 0.99, 25))
    assert_allclose(dists.prior_logpdf(d, x), ref.logpdf(x), rtol=1e-12, atol=1e-12)


def test_prior_outside_support_is_neg_inf():
    assert dists.prior_logpdf(DistParams(Family.HALF_CAUCHY, (1.0,)), -0.1) == -math.inf
    assert dists.prior_logpdf(DistParams(Family.EXPONENTIAL, (1.0,)), -1.0) == -math.inf
    assert dists.prior_logpdf(DistParams(Family.BETA, (1.0, 10.0)), 1.5) == -math.inf
    assert dists.prior_logpdf(DistParams(Family.DIRICHLET, (0.5, 3)), np.array([0.5, 0.6, -0.1])) == -math.inf


def test_dist_params_validation():
    with pytest.raises(DomainError, match="shape"):
        DistParams(Family.GAMMA, (0.0, 1.0))
    with pytest.raises(DomainError, match="mu"):
        DistParams(Family.BETA_PROPORTION, (1.0, 2.0))
    with pytest.raises(DomainError, match="expects 2"):
        DistParams(Family.NORMAL, (0.0,))


# -- samplers ---------------------------------------------------------------------------

def test_sampler_moments():
    rng = np.random.default_rng(3)
    g = dists.sample(DistParams(Family.GAMMA, (100, 100)), rng, 1_000_000)
    assert abs(g.mean() - 1.0) < 1e-3
    e = dists.sample(DistParams(Family.EXPONENTIAL, (10 / 6,)), rng, 1_000_000)
    assert abs(e.mean() - 10 / 6) < 5e-3
    b = dists.sample(DistParams(Family.BETA_PROPORTION, (0.3, 7.0)), rng, 1_000_000)
    assert abs(b.mean() - 0.3) < 2e-3


@pytest.mark.parametrize(
    "d,ref",
    [
        (DistParams(Family.NORMAL, (0.3, 2.0)), stats.norm(0.3, 2.0)),
        (DistParams(Family.CAUCHY, (0.0, 1.0)), stats.cauchy()),
        (DistParams(Family.HALF_CAUCHY, (5.0,)), stats.halfcauchy(scale=5.0)),
        (DistParams(Family.GAMMA, (100.0, 100.0)), stats.gamma(100.0, scale=0.01)),
        (DistParams(Family.BETA, (1.0, 10.0)), stats.beta(1.0, 10.0)),
        (DistParams(Family.BETA_PROPORTION, (0.3, 7.0)), stats.beta(2.1, 4.9)),
        (DistParams(Family.EXPONENTIAL, (10 / 6,)), stats.expon(scale=10 / 6)),
        (DistParams(Family.UNIFORM01), stats.uniform()),
    ],
)
def test_sampler_ks(d, ref):
    x = dists.sample(d, np.random.default_rng(4), 100_000)
    assert stats.kstest(x, ref.cdf).pvalue > 0.01


def test_dirichlet_sampler():
    rng = np.random.default_rng(5)
    x = dists.sample(DistParams(Family.DIRICHLET, (0.5, 4)), rng, 20000)
    assert x.shape == (20000, 4)
    assert_allclose(x.sum(axis=1), 1.0, rtol=1e-12)
    assert_allclose(x.mean(axis=0), 0.25, atol=0.01)


def test_negbin_sampler_moments():
    rng = np.random.default_rng(6)
    mu, phi = 438.0, 0.5
    x = dists.sample(DistParams(Family.NEG_BINOMIAL2, (mu, phi)), rng, 400_000)
    assert abs(x.mean() - mu) < 5 * math.sqrt((mu + mu**2 / phi) / x.size)
    assert_allclose(x.var(), mu + mu**2 / phi, rtol=0.03)


def test_sampler_reproducible():
    d = DistParams(Family.ZINB, (0.2, 5.0, 2.0))
    a = dists.sample(d, np.random.default_rng(7), 100)
    b = dists.sample(d, np.random.default_rng(7), 100)
    assert np.array_equal(a, b)


@settings(max_examples=50)
@given(mu=st.floats(0.1, 100), phi=st.floats(0.1, 50))
def test_negbin2_pmf_nonpositive(mu, phi):
    assert np.all(dists.negbin2_logpmf(np.arange(20), mu, phi) <= 0.0)
