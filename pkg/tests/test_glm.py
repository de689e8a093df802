import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from repcite.glm import (
    GlmError,
    box_stats,
    group_citation_summary,
    negbin_regression,
    overdispersion_test,
    pearson_by_year,
    poisson_regression,
    reproduced_effect,
    write_table1,
)

sm = pytest.importorskip("statsmodels.api")


def _design(rng, n):
    return np.column_stack([np.ones(n), rng.integers(0, 2, n), rng.normal(size=n)])


# -- Poisson ------------------------------------------------------------------------

def test_poisson_binary_closed_form():
    y = np.array([1, 3, 2, 3, 5, 4])
    x = np.array([0, 0, 0, 1, 1, 1])
    fit = poisson_regression(y, np.column_stack([np.ones(6), x]), ["intercept", "x"])
    assert_allclose(fit.coefficients, [math.log(2), math.log(2)], rtol=1e-10)


def test_poisson_constant_response():
    fit = poisson_regression(np.full(10, 7), np.ones((10, 1)))
    assert_allclose(fit.coefficients[0], math.log(7), rtol=1e-14)


def test_poisson_matches_statsmodels():
    rng = np.random.default_rng(0)
    X = _design(rng, 300)
    y = rng.poisson(np.exp(X @ [1.0, 0.3, -0.2]))
    ours = poisson_regression(y, X)
    ref = sm.GLM(y, X, family=sm.families.Poisson()).fit()
    assert_allclose(ours.coefficients, ref.params, rtol=1e-8)
    assert_allclose(ours.std_errors, ref.bse, rtol=1e-6)
    assert_allclose(ours.p_values, ref.pvalues, rtol=1e-5, atol=1e-12)
    assert_allclose(ours.loglik, ref.llf, rtol=1e-10)


def test_rank_deficiency_names_columns():
    X = np.column_stack([np.ones(5), np.arange(5), 2 * np.arange(5)])
    with pytest.raises(GlmError, match=r"c ~ b"):
        poisson_regression([1, 2, 3, 4, 5], X, ["a", "b", "c"])


def test_poisson_coverage_over_replicates():
    rng = np.random.default_rng(1)
    truth = np.array([0.5, 0.4, -0.3])
    covered = 0
    for _ in range(200):
        X = _design(rng, 200)
        fit = poisson_regression(rng.poisson(np.exp(X @ truth)), X)
        covered += np.all(np.abs(fit.coefficients - truth) < 3 * fit.std_errors)
    assert covered >= 190


# -- negative binomial ----------------------------------------------------------------

def test_negbin_matches_statsmodels_mle():
    rng = np.random.default_rng(2)
    X = _design(rng, 400)
    mu = np.exp(X @ [2.0, 0.5, 0.3])
    y = rng.negative_binomial(1.5, 1.5 / (1.5 + mu))
    ours = negbin_regression(y, X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = sm.NegativeBinomial(y, X, loglike_method="nb2").fit(disp=0, maxiter=500, method="bfgs", gtol=1e-10)
    assert_allclose(ours.coefficients, ref.params[:-1], rtol=1e-5)
    assert_allclose(1 / ours.dispersion, ref.params[-1], rtol=1e-4)
    assert_allclose(ours.loglik, ref.llf, rtol=1e-9)
    # standard errors are expected-information errors at the fitted dispersion
    glm = sm.GLM(y, X, family=sm.families.NegativeBinomial(alpha=1 / ours.dispersion)).fit()
    assert_allclose(ours.std_errors, glm.bse, rtol=1e-6)


def test_negbin_intercept_only_is_sample_mean():
    y = np.random.default_rng(3).negative_binomial(2, 0.1, 500)
    fit = negbin_regression(y, np.ones((500, 1)))
    assert abs(fit.coefficients[0] - math.log(y.mean())) < 1e-6


def test_negbin_on_poisson_data():
    rng = np.random.default_rng(4)
    X = _design(rng, 2000)
    y = rng.poisson(np.exp(X @ [1.0, 0.2, 0.1]))
    nb = negbin_regression(y, X)
    pois = poisson_regression(y, X)
    alpha = 0.0 if math.isinf(nb.dispersion) else 1 / nb.dispersion
    assert alpha < 0.02
    assert_allclose(nb.coefficients, pois.coefficients, atol=1e-3)


def test_negbin_poisson_limit_reported():
    # underdispersed data: likelihood increases all the way to the Poisson limit
    y = np.array([3, 4, 3, 4, 3, 4, 3, 4, 3, 4])
    fit = negbin_regression(y, np.ones((10, 1)))
    assert math.isinf(fit.dispersion)
    assert any("Poisson-limit reached" in n for n in fit.notes)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), phi=st.floats(0.3, 5.0))
def test_negbin_loglik_dominates_poisson(seed, phi):
    rng = np.random.default_rng(seed)
    X = _design(rng, 80)
    mu = np.exp(X @ [1.5, 0.3, 0.2])
    y = rng.negative_binomial(phi, phi / (phi + mu))
    assert negbin_regression(y, X).loglik >= poisson_regression(y, X).loglik - 1e-6


def test_p_values_in_unit_interval():
    rng = np.random.default_rng(5)
    X = _design(rng, 50)
    y = rng.poisson(3, 50)
    for fit in (poisson_regression(y, X), negbin_regression(y, X)):
        assert np.all((fit.p_values >= 0) & (fit.p_values <= 1))


# -- overdispersion --------------------------------------------------------------------

def test_overdispersion_calibrated_under_poisson():
    rng = np.random.default_rng(6)
    pvals = []
    for _ in range(200):
        X = np.column_stack([np.ones(10_000), rng.integers(0, 2, 10_000)])
        y = rng.poisson(np.exp(X @ [1.0, 0.3]))
        pvals.append(overdispersion_test(y, X).p_value)
    pvals = np.array(pvals)
    assert abs(np.mean(pvals < 0.05) - 0.05) <= 0.02
    assert stats.kstest(pvals, "uniform").pvalue > 0.001


def test_overdispersion_detects_inflated_variance():
    rng = np.random.default_rng(7)
    mu = 50.0
    phi = mu / 99  # variance = mu + mu^2/phi = 100 mu
    y = rng.negative_binomial(phi, phi / (phi + mu), 2000)
    res = overdispersion_test(y, np.ones((2000, 1)))
    assert res.p_value < 1e-6
    assert_allclose(res.mean, y.mean())
    assert_allclose(res.variance, y.var(ddof=1))


def test_overdispersion_permutation_invariant():
    rng = np.random.default_rng(8)
    X = _design(rng, 300)
    y = rng.negative_binomial(2, 0.2, 300)
    perm = rng.permutation(300)
    a, b = overdispersion_test(y, X), overdispersion_test(y[perm], X[perm])
    assert_allclose(a.statistic, b.statistic, rtol=1e-9)


# -- correlations -----------------------------------------------------------------------

def test_pearson_identity_and_negation():
    rng = np.random.default_rng(9)
    a = rng.poisson(20, (50, 5)).astype(float)
    assert_allclose([c.r for c in pearson_by_year(a, a)], 1.0)
    assert_allclose([c.r for c in pearson_by_year(a, -a + 100)], -1.0)


def test_pearson_zero_variance_year_undefined():
    a = np.random.default_rng(10).poisson(5, (20, 3)).astype(float)
    b = a.copy()
    b[:, 1] = 4.0
    res = pearson_by_year(a, b)
    assert not res[1].defined and math.isnan(res[1].r)
    assert res[0].defined
    # Bonferroni over the two defined years
    assert_allclose(res[0].p_adjusted, min(1.0, 2 * res[0].p_value))


def test_pearson_uses_jointly_observed_cells():
    a = np.array([[1, 2], [2, np.nan], [3, 5], [4, 4]], dtype=float)
    b = np.array([[1, 1], [2, 9], [3, 3], [5, np.nan]], dtype=float)
    res = pearson_by_year(a, b)
    assert res[0].n == 4 and res[1].n == 2 and not res[1].defined


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.01, 100), shift=st.floats(-100, 100))
def test_pearson_symmetric_and_affine_invariant(seed, scale, shift):
    rng = np.random.default_rng(seed)
    a = rng.poisson(10, (30, 4)).astype(float)
    b = a + rng.poisson(3, (30, 4))
    r_ab = [c.r for c in pearson_by_year(a, b)]
    assert_allclose(r_ab, [c.r for c in pearson_by_year(b, a)], rtol=1e-12, equal_nan=True)
    assert_allclose(r_ab, [c.r for c in pearson_by_year(scale * a + shift, b)], rtol=1e-8, equal_nan=True)


# -- box statistics ------------------------------------------------------------------------

def test_box_stats_examples():
    s = box_stats([1, 2, 3, 4, 5])
    assert (s.median, s.q1, s.q3) == (3, 2, 4)
    one = box_stats([7])
    assert one.median == one.q1 == one.q3 == one.whisker_lo == one.whisker_hi == 7
    out = box_stats([1, 2, 3, 4, 100])
    assert out.outliers == (100.0,) and out.whisker_hi == 4


def test_group_summary_omits_empty_groups(caplog):
    rows = [("Economics", True, 10), ("Economics", True, 30), ("Economics", False, 5)]
    summary = group_citation_summary(rows, fields=["Economics", "Medicine"])
    assert set(summary) == {("Economics", True), ("Economics", False)}
    assert "Medicine" in caplog.text


# -- table 1 ------------------------------------------------------------------------------------

def test_reproduced_effect_and_csv(tmp_path):
    rng = np.random.default_rng(11)
    r = rng.integers(0, 2, 100)
    y = rng.negative_binomial(1.0, 1.0 / (1.0 + 100 * np.exp(0.5 * r)))
    row, fit = reproduced_effect(y, r, "nb", "SC")
    assert row.model == "NB" and row.n == 100
    assert row.coef == fit.coef("reproduced")
    write_table1([row], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "model,source,coef,std_err,p,n,note"


def test_reproduced_effect_constant_indicator():
    row, fit = reproduced_effect([1, 5, 3], [1, 1, 1], "poisson", "GS")
    assert math.isnan(row.coef) and "intercept-only" in row.note
    with pytest.raises(ValueError, match="unknown model"):
        reproduced_effect([1, 2], [0, 1], "logit", "GS")
