"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL|BLOCKED ...`` line (also
collected into the terminal summary). Criteria that need the released
citation data read it from ``$REPCITE_DATA_DIR`` (``science.csv`` and
``ml.csv`` in the loader's schema) and are reported BLOCKED, as skips, when
it is absent.
"""

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from repcite import dists, glm, report
from repcite.cli import _source_filter, _totals
from repcite.data import load_dataset
from repcite.infer import SamplerConfig, fit, grad_joint, nuts_sample
from repcite.model import (
    FIELDS,
    ML,
    SCIENCE,
    CitationModel,
    Layout,
    ModelConfig,
    PaperRecord,
    collapsed_loglik,
    linear_predictor,
)
from repcite.simulate import balanced_design, draw_params, interior, prior_predictive
from tests import oracles

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = os.environ.get("REPCITE_DATA_DIR")
REPORT: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    REPORT.append(line)
    print(line)
    assert ok, line


def blocked(n: int, what: str) -> None:
    line = f"CRITERION {n}: BLOCKED {what}"
    REPORT.append(line)
    print(line)
    pytest.skip(line)


def released(name: str) -> Path:
    if not DATA_DIR:
        return None
    p = Path(DATA_DIR) / name
    return p if p.is_file() else None


def test_criterion_1_distributions():
    t0 = time.time()
    checks = {}
    rng = np.random.default_rng(0)
    worst = 0.0
    for mu, phi in zip(rng.uniform(0.1, 200, 100), rng.uniform(0.1, 50, 100)):
        hi = int(mu + 60 * math.sqrt(mu + mu * mu / phi)) + 200
        worst = max(worst, abs(np.exp(dists.negbin2_logpmf(np.arange(hi), mu, phi)).sum() - 1))
    checks["nb2 normalization"] = worst < 1e-10
    n = np.arange(60)
    lim = np.max(np.abs(np.exp(dists.negbin2_logpmf(n, 7.0, 1e9)) - stats.poisson.pmf(n, 7.0)))
    checks["poisson limit"] = lim < 1e-4
    checks["zinb gate=0"] = np.array_equal(dists.zinb_logpmf(n, 0.0, 7.0, 3.0), dists.negbin2_logpmf(n, 7.0, 3.0))
    th = np.linspace(0.01, 0.99, 50)
    bp = dists.beta_proportion_logpdf(th, 0.3, 8.0)
    checks["betaproportion=beta"] = np.allclose(bp, stats.beta.logpdf(th, 2.4, 5.6), rtol=1e-12)
    suite = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "tests/test_dists.py"],
                           cwd=ROOT, capture_output=True, text=True)
    checks["test_dists suite green"] = suite.returncode == 0
    elapsed = time.time() - t0
    ok = all(checks.values()) and elapsed < 60
    record(1, ok, f"({', '.join(k for k, v in checks.items() if v)} ok; nb2 sum err {worst:.1e}, "
                  f"poisson diff {lim:.1e}; {elapsed:.1f}s)")


def test_criterion_2_gradient():
    t0 = time.time()
    rng = np.random.default_rng(2)
    cfg = ModelConfig(T=5, K=3, groups=("Economics", "Medicine"))
    data = [PaperRecord(f"p{i}", cfg.groups[i % 2], bool(i // 2), 2015, rng.integers(0, 40, 5),
                        np.arange(5) < 3 + i % 3) for i in range(4)]
    model = CitationModel(cfg, data)
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        theta = rng.normal(size=model.dim)
        g = grad_joint(theta, data, cfg)
        fd = np.array([(model.log_density(theta + h * e) - model.log_density(theta - h * e)) / (2 * h)
                       for e in np.eye(model.dim)])
        worst = max(worst, float(np.max(np.abs(fd - g) / np.maximum(np.abs(g), np.abs(fd)))))
    elapsed = time.time() - t0
    record(2, worst < 1e-5 and elapsed < 60, f"(max relative error {worst:.2e} over 20 points, {elapsed:.1f}s)")


def test_criterion_3_marginalization():
    rng = np.random.default_rng(3)
    worst, worst_empty = 0.0, 0.0
    for i in range(100):
        K, T = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        cfg = ModelConfig(T=T, K=K, groups=("Medicine",))
        p = interior(draw_params(cfg, 1, rng)).copy(
            base=rng.uniform(0.5, 2.0, K), shift=rng.uniform(0, 3, K), phi=float(rng.uniform(0.3, 20)),
            gate=rng.uniform(0.05, 0.95, 1), bias=rng.normal(1.0, 1.0, 1), beta=rng.normal(0, 1, 1),
            omega_S=rng.dirichlet(np.ones(K)), omega_F=rng.dirichlet(np.ones(K)))
        counts = rng.integers(0, 25, T)
        # relative error needs a nonzero reference, so at least one year is observed
        rec = PaperRecord("x", "Medicine", bool(i % 2), 2015, counts, np.arange(T) < int(rng.integers(1, T + 1)))
        mu = math.exp(linear_predictor(rec, p, cfg))
        w = p.omega_S if rec.reproduced else p.omega_F
        ref = oracles.collapsed_prob_space(rec.counts, rec.observed, p.gate[0], mu, w, p.base, p.shift, p.phi)
        worst = max(worst, abs(collapsed_loglik(rec, p, cfg, 0) - ref) / abs(ref))
        # with nothing observed the exact value is log(sum w) = 0
        empty = PaperRecord("e", "Medicine", rec.reproduced, 2015, counts, np.zeros(T, bool))
        worst_empty = max(worst_empty, abs(collapsed_loglik(empty, p, cfg, 0)))
    record(3, worst < 1e-10 and worst_empty < 1e-14,
           f"(max relative error {worst:.1e} over 100 instances; unobserved papers |value| {worst_empty:.1e})")


def test_criterion_4_masking():
    rng = np.random.default_rng(4)
    exact = 0
    for _ in range(100):
        cfg = ModelConfig(T=int(rng.integers(2, 7)), K=int(rng.integers(1, 5)))
        n = int(rng.integers(1, 6))
        data = [PaperRecord(f"p{i}", FIELDS[int(rng.integers(4))], bool(rng.integers(2)), 2015,
                            rng.integers(0, 50, cfg.T), np.arange(cfg.T) < int(rng.integers(0, cfg.T + 1)))
                for i in range(n)]
        other = [PaperRecord(r.id, r.group, r.reproduced, r.pub_year,
                             np.where(r.observed, r.counts, rng.integers(0, 10**6, cfg.T)), r.observed) for r in data]
        theta = rng.normal(size=Layout.build(cfg, n).size)
        a = CitationModel(cfg, data).log_density_and_grad(theta)
        b = CitationModel(cfg, other).log_density_and_grad(theta)
        exact += int(a[0] == b[0] and np.array_equal(a[1], b[1]))
    record(4, exact == 100, f"({exact}/100 instances bit-identical in density and gradient)")


def test_criterion_5_sampler_sanity():
    t0 = time.time()

    def std_normal(x):
        return -0.5 * float(x @ x), -x

    sc = SamplerConfig(warmup=500, draws=500, thin=1, chains=4, seed=0)
    pd = nuts_sample(std_normal, np.zeros(5), sc)
    again = nuts_sample(std_normal, np.zeros(5), sc)
    mean, var = pd.values.mean(axis=0), pd.values.var(axis=0)
    same = pd.values.tobytes() == again.values.tobytes()
    elapsed = time.time() - t0
    ok = (pd.values.shape[0] == 2000 and np.all(np.abs(mean) < 0.05) and np.all((var > 0.9) & (var < 1.1))
          and same and elapsed < 120)
    record(5, ok, f"(max |mean| {np.abs(mean).max():.3f}, variance in [{var.min():.3f}, {var.max():.3f}], "
                  f"byte-identical rerun {same}, {elapsed:.1f}s)")


@pytest.mark.slow
def test_criterion_6_recovery():
    t0 = time.time()
    cfg = ModelConfig(T=10, K=10, groups=("Medicine",))
    covered, lines = 0, []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        design = balanced_design(cfg, 60, rng, min_years=3)
        while True:
            try:
                records, _ = prior_predictive(cfg, design, rng, {"beta": 0.5})
                break
            except OverflowError:
                continue
        pd = fit(records, cfg, SamplerConfig(warmup=300, draws=500, thin=1, chains=1, seed=seed))
        lo, hi = np.quantile(pd.column("beta[Medicine]"), [0.05, 0.95])
        covered += int(lo <= 0.5 <= hi)
        lines.append(f"seed {seed}: [{lo:.3f}, {hi:.3f}]")
    print("\n".join(lines))
    record(6, covered >= 16, f"(90% CI covers beta=0.5 in {covered}/20 fits, {(time.time() - t0) / 60:.1f} min)")


def test_criterion_7_baseline_battery():
    path = released("science.csv")
    if path is None:
        blocked(7, "released science data absent (set REPCITE_DATA_DIR)")
    t0 = time.time()
    ds = load_dataset(path, SCIENCE)
    checks = {}
    src, fields = _source_filter("GS")
    recs = ds.subset(src, fields)
    y = _totals(recs)
    od = glm.overdispersion_test(y, np.column_stack([np.ones(y.size), [r.reproduced for r in recs]]))
    checks["overdispersion"] = (od.p_value < 0.001 and abs(od.mean / 438 - 1) <= 0.05
                                and abs(od.variance / 504_639 - 1) <= 0.10)
    rows = {}
    for model, source in (("poisson", "GS"), ("nb", "SC+M")):
        src, fields = _source_filter(source)
        recs = ds.subset(src, fields)
        row, _ = glm.reproduced_effect(_totals(recs), [r.reproduced for r in recs], model, source)
        rows[source] = row
    checks["poisson GS n.s."] = rows["GS"].p > 0.05
    checks["nb SC+M positive"] = rows["SC+M"].coef > 0 and rows["SC+M"].p < 0.05
    r3 = None
    if {"GS", "SC"} <= set(ds.available_sources()):
        a, b, _ = ds.paired_counts("GS", "SC")
        corr = glm.pearson_by_year(a, b)
        r3 = next((c.r for c in corr if c.t == 3), None)
        checks["year-3 r"] = r3 is not None and abs(r3 - 0.90) <= 0.02
    elapsed = time.time() - t0
    record(7, all(checks.values()) and elapsed < 60,
           f"(mean {od.mean:.1f}, variance {od.variance:.0f}, p {od.p_value:.2g}; Poisson-GS p {rows['GS'].p:.3f}; "
           f"NB-SC+M {rows['SC+M'].coef:.4f} p {rows['SC+M'].p:.3f}; year-3 r {r3}; failed: "
           f"{[k for k, v in checks.items() if not v]})")


@pytest.mark.slow
def test_criterion_8_science_fit():
    path = released("science.csv")
    if path is None:
        blocked(8, "released science data absent (set REPCITE_DATA_DIR)")
    t0 = time.time()
    ds = load_dataset(path, SCIENCE)
    src, fields = _source_filter("SC+M")
    recs = ds.subset(src, fields)
    cfg = ModelConfig(T=10, K=50, groups=tuple(f for f in fields if any(r.group == f for r in recs)))
    recs = [PaperRecord(r.id, r.group, r.reproduced, r.pub_year, r.counts[:10], r.observed[:10]) for r in recs]
    pd = fit(recs, cfg, SamplerConfig())
    ci = {f: np.quantile(pd.column(f"beta[{f}]"), [0.025, 0.975]) for f in cfg.groups}
    rhat = max(pd.diagnostics[f"beta[{f}]"][0] for f in cfg.groups)
    r2 = report.bayes_r2(pd, recs, cfg).metadata()["r2"]
    ok = (ci["Medicine"][0] > 0 and all(ci[f][0] <= 0 <= ci[f][1] for f in cfg.groups if f != "Medicine")
          and rhat < 1.05 and 0.10 <= r2 <= 0.30 and time.time() - t0 < 7200)
    record(8, ok, f"(CIs {({f: tuple(round(float(x), 3) for x in v) for f, v in ci.items()})}, max R-hat {rhat:.3f}, R2 {r2:.3f}, "
                  f"{(time.time() - t0) / 60:.1f} min)")


@pytest.mark.slow
def test_criterion_9_ml_fit():
    path = released("ml.csv")
    if path is None:
        blocked(9, "released ML data absent (set REPCITE_DATA_DIR)")
    t0 = time.time()
    ds = load_dataset(path, ML)
    cfg = ModelConfig.ml(T=10, K=50)
    recs = [PaperRecord(r.id, r.group, r.reproduced, r.pub_year, r.counts[:10], r.observed[:10]) for r in ds.records]
    pd = fit(recs, cfg, SamplerConfig())
    ci = {n: np.quantile(pd.column(f"beta[{n}]"), [0.025, 0.975])
          for n in ("reproduced", "code_available", "conceptualization_figures", "venue_workshop")}
    r2 = report.bayes_r2(pd, recs, pd.extras["config"]).metadata()["r2"]
    ok = (ci["reproduced"][0] > 0 and ci["code_available"][0] > 0 and ci["conceptualization_figures"][1] < 0
          and ci["venue_workshop"][1] < 0 and 0.20 <= r2 <= 0.42 and time.time() - t0 < 7200)
    record(9, ok, f"(CIs {({n: tuple(round(float(x), 3) for x in v) for n, v in ci.items()})}, R2 {r2:.3f}, "
                  f"{(time.time() - t0) / 60:.1f} min)")


@pytest.mark.slow
def test_criterion_10_sbc():
    t0 = time.time()
    cfg = ModelConfig(T=4, K=2, groups=("Economics", "Medicine"))
    targets = ("beta[Economics]", "beta[Medicine]", "phi")
    ranks = {name: [] for name in targets}
    n_rep, bins = 50, 5
    for rep in range(n_rep):
        rng = np.random.default_rng(1000 + rep)
        while True:
            # rejecting on the simulated data keeps the posterior of accepted draws unchanged
            try:
                records, truth = prior_predictive(cfg, balanced_design(cfg, 16), rng)
                break
            except OverflowError:
                continue
        pd = fit(records, cfg, SamplerConfig(warmup=300, draws=800, thin=8, chains=1, seed=rep))
        values = {"beta[Economics]": truth.beta[0], "beta[Medicine]": truth.beta[1], "phi": truth.phi}
        for name in targets:
            ranks[name].append(int(np.sum(pd.column(name) < values[name])))
    L = 100  # retained draws per fit
    pvals = {}
    for name, r in ranks.items():
        counts = np.bincount(np.asarray(r) * bins // (L + 1), minlength=bins)
        pvals[name] = stats.chisquare(counts).pvalue
        print(name, counts.tolist(), f"p={pvals[name]:.3f}")
    record(10, all(p > 0.01 for p in pvals.values()),
           f"(chi-square p: {', '.join(f'{k} {v:.3f}' for k, v in pvals.items())}; {n_rep} replicates, "
           f"{(time.time() - t0) / 60:.1f} min)")

