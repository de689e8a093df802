"""Count-regression baselines and citation-data diagnostics.

Poisson and NB2 regressions are fit by iteratively reweighted least
squares; for NB2 the dispersion is maximized on the profile likelihood
between IRLS passes. Standard errors are Wald errors from the expected
information at the optimum.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln

log = logging.getLogger(__name__)

MAX_ITER = 100
# 1/phi below this is treated as the Poisson limit
POISSON_LIMIT_ALPHA = 1e-8
MU_FLOOR = 1e-8


class GlmError(ValueError):
    pass


class ConvergenceError(GlmError):
    pass


@dataclass
class GlmFit:
    """Result of a count regression.

    ``pseudo_r2`` is the squared Pearson correlation between fitted means and
    ``y``, adjusted for the number of coefficients. ``dispersion`` is the NB2
    phi (``inf`` in the Poisson limit, ``None`` for Poisson fits).
    """

    names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    z_scores: np.ndarray
    p_values: np.ndarray
    loglik: float
    pseudo_r2: float
    n: int
    dispersion: float | None = None
    iterations: int = 0
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        k = len(self.names)
        for name in ("coefficients", "std_errors", "z_scores", "p_values"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {k}")

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def row(self, name: str) -> tuple[float, float, float]:
        j = self.names.index(name)
        return float(self.coefficients[j]), float(self.std_errors[j]), float(self.p_values[j])


def _design(X, names) -> tuple[np.ndarray, list[str]]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise GlmError(f"{len(names)} names for {X.shape[1]} columns")
    if not np.all(np.isfinite(X)):
        raise GlmError("design matrix contains non-finite values")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        # each column that adds no rank, together with the earlier columns
        # that reproduce it
        collinear = []
        basis: list[int] = []
        for j in range(X.shape[1]):
            if basis and np.linalg.matrix_rank(X[:, basis + [j]]) == len(basis):
                coef = np.linalg.lstsq(X[:, basis], X[:, j], rcond=None)[0]
                used = [names[b] for b, c in zip(basis, coef) if abs(c) > 1e-8]
                collinear.append(f"{names[j]} ~ {' + '.join(used) or '0'}")
            elif not basis and not np.any(X[:, j]):
                collinear.append(f"{names[j]} ~ 0")
            else:
                basis.append(j)
        raise GlmError(f"design matrix is rank deficient (rank {rank} < {X.shape[1]}); collinear columns: {', '.join(collinear)}")
    return X, names


def _counts(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise GlmError("y must be one-dimensional")
    if np.any(~np.isfinite(y)) or np.any(y < 0):
        raise GlmError("y must contain finite non-negative counts")
    return y


def _adjusted_r2(mu: np.ndarray, y: np.ndarray, k: int) -> float:
    n = y.size
    if n - k <= 0 or np.std(mu) == 0 or np.std(y) == 0:
        return float("nan")
    r2 = float(np.corrcoef(mu, y)[0, 1] ** 2)
    return 1.0 - (1.0 - r2) * (n - 1) / (n - k)


def _wald(beta: np.ndarray, info: np.ndarray):
    cov = np.linalg.inv(info)
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p = 2.0 * stats.norm.sf(np.abs(z))
    return se, z, p


def _irls(y, X, weight_fn, beta0=None, max_iter=MAX_ITER, tol=1e-10):
    """IRLS with log link. ``weight_fn(mu)`` gives the working weights.

    Returns (beta, mu, iterations). Raises ConvergenceError with the last
    deviance proxy (relative change in log-likelihood-free objective).
    """
    if beta0 is None:
        mu = y + 0.5 * max(y.mean(), 0.1)
        eta = np.log(mu)
        beta = np.linalg.lstsq(X, eta, rcond=None)[0]
    else:
        beta = np.array(beta0, dtype=float)
    eta = X @ beta
    mu = np.exp(eta)
    last = np.inf
    for it in range(1, max_iter + 1):
        w = weight_fn(mu)
        z = eta + (y - mu) / mu
        XtW = X.T * w
        step = np.linalg.solve(XtW @ X, XtW @ z)
        # halve the step while the linear predictor explodes
        for _ in range(30):
            eta_new = X @ step
            if np.all(eta_new < 700):
                break
            step = 0.5 * (step + beta)
        beta, eta = step, eta_new
        mu = np.maximum(np.exp(eta), MU_FLOOR)
        dev = _poisson_deviance(y, mu)
        if abs(dev - last) <= tol * (abs(dev) + 0.1):
            return beta, mu, it
        last = dev
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations (last deviance {last:.6g})")


def _poisson_deviance(y, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def _poisson_loglik(y, mu) -> float:
    return float(np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))


def _nb_loglik(y, mu, phi) -> float:
    return float(np.sum(
        gammaln(y + phi) - gammaln(phi) - gammaln(y + 1.0)
        + phi * (np.log(phi) - np.logaddexp(np.log(mu), np.log(phi)))
        + y * (np.log(mu) - np.logaddexp(np.log(mu), np.log(phi)))
    ))


def poisson_regression(y, X, names: Sequence[str] | None = None, max_iter: int = MAX_ITER) -> GlmFit:
    """Poisson regression with log link by IRLS; Wald p-values."""
    y = _counts(y)
    X, names = _design(X, names)
    beta, mu, it = _irls(y, X, lambda mu: mu, max_iter=max_iter)
    se, z, p = _wald(beta, (X.T * mu) @ X)
    return GlmFit(names, beta, se, z, p, _poisson_loglik(y, mu), _adjusted_r2(mu, y, X.shape[1]), y.size, None, it)


def negbin_regression(y, X, names: Sequence[str] | None = None, max_iter: int = MAX_ITER) -> GlmFit:
    """NB2 regression (variance mu + mu^2/phi) by alternating IRLS for the
    coefficients and a bounded 1-D search for log(1/phi).

    If the dispersion runs to the Poisson limit, the Poisson fit is returned
    with ``dispersion = inf`` and a note.
    """
    y = _counts(y)
    X, names = _design(X, names)
    pois = poisson_regression(y, X, names, max_iter)
    beta = pois.coefficients
    mu = np.exp(X @ beta)
    # score for 1/phi at 0 under the Poisson fit; if it is not positive the
    # likelihood peaks on the Poisson boundary
    if float(np.sum((y - mu) ** 2 - y)) <= 0:
        return _poisson_limit(pois, pois.iterations)
    log_alpha = 0.0
    total_it = pois.iterations
    prev_ll = -np.inf
    for _ in range(max_iter):
        res = optimize.minimize_scalar(
            lambda la: -_nb_loglik(y, mu, math.exp(-la)), bounds=(-25.0, 15.0), method="bounded",
            options={"xatol": 1e-10},
        )
        log_alpha = float(res.x)
        phi = math.exp(-log_alpha)
        beta, mu, it = _irls(y, X, lambda m: m / (1.0 + m / phi), beta0=beta, max_iter=max_iter)
        total_it += it
        ll = _nb_loglik(y, mu, phi)
        if abs(ll - prev_ll) < 1e-10 * (abs(ll) + 1.0):
            break
        prev_ll = ll
    else:
        raise ConvergenceError(f"NB2 fit did not converge in {max_iter} outer iterations (last loglik {ll:.6g})")
    if math.exp(log_alpha) < POISSON_LIMIT_ALPHA:
        return _poisson_limit(pois, total_it)
    se, z, p = _wald(beta, (X.T * (mu / (1.0 + mu / phi))) @ X)
    return GlmFit(names, beta, se, z, p, ll, _adjusted_r2(mu, y, X.shape[1]), y.size, phi, total_it)


def _poisson_limit(pois: GlmFit, iterations: int) -> GlmFit:
    pois.dispersion = math.inf
    pois.notes.append("Poisson-limit reached: dispersion diverged, Poisson fit reported")
    pois.iterations = iterations
    return pois


@dataclass(frozen=True)
class OverdispersionResult:
    statistic: float
    p_value: float
    mean: float
    variance: float
    slope: float
    n_dropped: int = 0


def overdispersion_test(y, X, names: Sequence[str] | None = None) -> OverdispersionResult:
    """Cameron-Trivedi auxiliary regression test against equidispersion.

    Regresses ((y - mu)^2 - y) / mu on mu without an intercept, where mu is
    the Poisson fit, and tests slope > 0 with a one-sided t-test. ``mean``
    and ``variance`` (ddof=1) describe the raw counts.
    """
    y = _counts(y)
    fit = poisson_regression(y, X, names)
    X, _ = _design(X, names)
    mu = np.exp(X @ fit.coefficients)
    keep = mu > MU_FLOOR
    n_dropped = int(np.sum(~keep))
    if n_dropped:
        log.warning("overdispersion test: dropped %d rows with fitted mean near 0", n_dropped)
    m, yy = mu[keep], y[keep]
    aux = ((yy - m) ** 2 - yy) / m
    slope = float(aux @ m / (m @ m))
    resid = aux - slope * m
    dof = m.size - 1
    s2 = float(resid @ resid) / dof
    t = slope / math.sqrt(s2 / float(m @ m))
    p = float(stats.t.sf(t, dof))
    return OverdispersionResult(t, p, float(y.mean()), float(y.var(ddof=1)), slope, n_dropped)


@dataclass(frozen=True)
class YearCorrelation:
    t: int
    r: float
    p_value: float
    p_adjusted: float
    n: int
    defined: bool


def pearson_by_year(a, b) -> list[YearCorrelation]:
    """Pearson correlation between two sources per relative year.

    ``a`` and ``b`` are papers x years arrays with NaN for unobserved cells;
    each year uses the papers observed in both. p-values are
    Bonferroni-adjusted over the years where r is defined. A year with no
    variance in either source gets ``defined=False`` and NaN statistics.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"sources must be aligned 2-D arrays, got {a.shape} and {b.shape}")
    raw = []
    for t in range(a.shape[1]):
        both = np.isfinite(a[:, t]) & np.isfinite(b[:, t])
        x, z = a[both, t], b[both, t]
        if x.size < 3 or np.ptp(x) == 0 or np.ptp(z) == 0:
            raw.append((t, math.nan, math.nan, int(x.size), False))
            continue
        r, p = stats.pearsonr(x, z)
        raw.append((t, float(np.clip(r, -1.0, 1.0)), float(p), int(x.size), True))
    n_tests = sum(1 for row in raw if row[4])
    return [
        YearCorrelation(t, r, p, min(1.0, p * n_tests) if ok else math.nan, n, ok)
        for t, r, p, n, ok in raw
    ]


@dataclass(frozen=True)
class BoxStats:
    n: int
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


def box_stats(values) -> BoxStats:
    """Box-plot statistics with linear-interpolation quartiles and whiskers
    at the most extreme points within 1.5 IQR of the box."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("box_stats needs at least one value")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    outliers = tuple(float(x) for x in v if x < inside[0] or x > inside[-1])
    return BoxStats(int(v.size), float(med), float(q1), float(q3), float(inside[0]), float(inside[-1]), outliers)


def group_citation_summary(rows: Iterable[tuple[str, bool, float]], fields: Sequence[str] | None = None) -> dict:
    """Box statistics of total citations per (field, reproduced) group.

    ``rows`` yields (field, reproduced, total). When ``fields`` is given,
    expected groups without rows are omitted with a warning.
    """
    groups: dict[tuple[str, bool], list[float]] = {}
    for fld, rep, total in rows:
        groups.setdefault((fld, bool(rep)), []).append(float(total))
    if fields is not None:
        for fld in fields:
            for rep in (True, False):
                if (fld, rep) not in groups:
                    log.warning("no papers for field %s with reproduced=%s; group omitted", fld, rep)
    return {key: box_stats(vals) for key, vals in sorted(groups.items())}


@dataclass(frozen=True)
class Table1Row:
    model: str
    source: str
    coef: float
    std_err: float
    p: float
    n: int
    note: str = ""


def reproduced_effect(totals, reproduced, model: str, source: str) -> tuple[Table1Row, GlmFit]:
    """Fit total citations on intercept + reproduced indicator.

    A constant indicator falls back to an intercept-only fit (with a warning)
    and reports NaN for the effect.
    """
    y = _counts(totals)
    r = np.asarray(reproduced, dtype=float)
    fitter = {"poisson": poisson_regression, "nb": negbin_regression}.get(model)
    if fitter is None:
        raise ValueError(f"unknown model {model!r}; expected 'poisson' or 'nb'")
    label = {"poisson": "Poisson", "nb": "NB"}[model]
    if np.ptp(r) == 0:
        log.warning("reproduced indicator is constant; fitting intercept only")
        fit = fitter(y, np.ones((y.size, 1)), ["intercept"])
        return Table1Row(label, source, math.nan, math.nan, math.nan, y.size, "indicator constant; intercept-only"), fit
    fit = fitter(y, np.column_stack([np.ones(y.size), r]), ["intercept", "reproduced"])
    coef, se, p = fit.row("reproduced")
    return Table1Row(label, source, coef, se, p, y.size, "; ".join(fit.notes)), fit


def write_table1(rows: Sequence[Table1Row], path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "source", "coef", "std_err", "p", "n", "note"])
        for r in rows:
            w.writerow([r.model, r.source, repr(r.coef), repr(r.std_err), repr(r.p), r.n, r.note])
