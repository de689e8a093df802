"""Hierarchical zero-inflated NB model of per-year citation counts.

Each paper has a base log-rate from its field (science variant) or its
feature vector (ML variant), shifted by a reproduction effect. A latent
citation style, shared across papers through a finite pool of
(base, shift) pairs, multiplies the rate over time; the style indicator is
summed out analytically. Reproduced and non-reproduced papers draw styles
from separate mixture weights over the same pool.

Two evaluation paths exist: the per-record functions (``linear_predictor``,
``paper_loglik_given_style``, ``collapsed_loglik``) are written for clarity,
and :class:`CitationModel` evaluates the whole joint density and its
gradient in vectorized form for sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from repcite import _kernel, dists
from repcite.dists import DistParams, Family
from repcite.transforms import (
    log_sigmoid,
    logit,
    sigmoid,
    stick_breaking,
    stick_breaking_inverse,
)

SCIENCE = "science"
ML = "ml"

FIELDS = ("Economics", "Psychology", "Social", "Medicine")

# (csv column, display label, continuous?) in forest-plot order.
ML_FEATURES = (
    ("reproduced", "Reproducible", False),
    ("code_available", "Code Available", False),
    ("theory", "Theory", False),
    ("empirical", "Empirical", False),
    ("balanced", "Balanced", False),
    ("num_references", "Num References", True),
    ("num_equations", "Number of Equations", True),
    ("num_proofs", "Number of Proofs", True),
    ("total_tables_figures", "Total Tables and Figures", True),
    ("num_tables", "Number of Tables", True),
    ("num_graphs_plots", "Number of Graphs/Plots", True),
    ("num_other_figures", "Number of Other Figures", True),
    ("conceptualization_figures", "Conceptualization Figures", False),
    ("venue_book", "Book", False),
    ("venue_conference", "Conference", False),
    ("venue_journal", "Journal", False),
    ("venue_tech_report", "Tech Report", False),
    ("venue_workshop", "Workshop", False),
)
ML_FEATURE_NAMES = tuple(f[0] for f in ML_FEATURES)
ML_FEATURE_LABELS = tuple(f[1] for f in ML_FEATURES)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class LayoutError(ValueError):
    """Parameter vector does not match the model layout."""


class DataError(ValueError):
    """A record is inconsistent with the model configuration."""


@dataclass(frozen=True)
class PaperRecord:
    """One paper's outcome and per-year citation counts.

    ``counts[t]`` holds citations in relative year ``t`` (0 is the
    publication year); ``observed`` is a prefix mask of elapsed years.
    For the science variant ``group`` is a field label; for the ML variant it
    is the raw feature vector ordered as :data:`ML_FEATURE_NAMES`.
    """

    id: str
    group: object
    reproduced: bool
    pub_year: int
    counts: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        observed = np.asarray(self.observed, dtype=bool)
        if counts.shape != observed.shape or counts.ndim != 1:
            raise DataError(f"paper {self.id}: counts and observed must be 1-d of equal length")
        if observed.size and np.any(observed[1:] & ~observed[:-1]):
            raise DataError(f"paper {self.id}: non-prefix observation mask")
        if np.any(counts[observed] < 0):
            raise DataError(f"paper {self.id}: negative citation count")
        if not isinstance(self.group, str):
            object.__setattr__(self, "group", np.asarray(self.group, dtype=float))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "reproduced", bool(self.reproduced))


@dataclass(frozen=True)
class ModelConfig:
    """Structural settings of the model.

    ``groups`` are the field labels (science) or feature names (ML).
    ``feature_center``/``feature_scale`` standardize ML features; leave them
    ``None`` for raw features.
    """

    T: int = 10
    K: int = 50
    variant: str = SCIENCE
    groups: tuple[str, ...] = FIELDS
    laplace_scale: float | None = None
    gamma_base: tuple[float, float] = (100.0, 100.0)
    feature_center: tuple[float, ...] | None = None
    feature_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.variant not in (SCIENCE, ML):
            raise ValueError(f"variant must be {SCIENCE!r} or {ML!r}, got {self.variant!r}")
        if self.T < 1 or self.K < 1:
            raise ValueError("T and K must be >= 1")
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.laplace_scale is None:
            object.__setattr__(self, "laplace_scale", self.T / 6.0)
        if self.laplace_scale <= 0:
            raise ValueError("laplace_scale must be > 0")

    @classmethod
    def ml(cls, **kwargs) -> "ModelConfig":
        kwargs.setdefault("groups", ML_FEATURE_NAMES)
        return cls(variant=ML, **kwargs)

    @property
    def n_groups(self) -> int:
        return len(self.groups)


@dataclass
class ConstrainedParams:
    lambda_ridge: float
    alpha: float
    omega_S: np.ndarray
    omega_F: np.ndarray
    base: np.ndarray
    shift: np.ndarray
    beta_hat: float
    beta: np.ndarray
    bias: np.ndarray
    gate_mu: float
    gate_kappa: float
    phi: float
    gate: np.ndarray

    def copy(self, **changes) -> "ConstrainedParams":
        fields = {k: (np.array(v) if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        fields.update(changes)
        return ConstrainedParams(**fields)


# Transform kinds for each block of the unconstrained vector.
_POS, _UNIT, _SIMPLEX, _REAL = "positive", "unit", "simplex", "real"


@dataclass(frozen=True)
class Layout:
    """Named slices of the flat unconstrained vector."""

    cfg: ModelConfig
    n_papers: int
    slices: dict = field(default_factory=dict)
    kinds: dict = field(default_factory=dict)
    size: int = 0

    @classmethod
    def build(cls, cfg: ModelConfig, n_papers: int) -> "Layout":
        K, G = cfg.K, cfg.n_groups
        blocks = [
            ("lambda_ridge", 1, _POS),
            ("alpha", 1, _UNIT),
            ("omega_S", K - 1, _SIMPLEX),
            ("omega_F", K - 1, _SIMPLEX),
            ("shift", K, _POS),
            ("base", K, _POS),
        ]
        if cfg.variant == SCIENCE:
            blocks += [("beta_hat", 1, _REAL), ("beta", G, _REAL), ("bias", G, _REAL)]
        else:
            blocks += [("beta", G, _REAL), ("bias", 1, _REAL)]
        blocks += [
            ("gate_mu", 1, _UNIT),
            ("gate_kappa", 1, _POS),
            ("phi", 1, _POS),
            ("gate", n_papers, _UNIT),
        ]
        slices, kinds, pos = {}, {}, 0
        for name, n, kind in blocks:
            slices[name] = slice(pos, pos + n)
            kinds[name] = kind
            pos += n
        return cls(cfg, n_papers, slices, kinds, pos)

    def check(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise LayoutError(f"expected unconstrained vector of length {self.size}, got shape {theta.shape}")
        return theta

    def unconstrained_names(self) -> list[str]:
        names = []
        for name, sl in self.slices.items():
            n = sl.stop - sl.start
            names += [name] if n == 1 and name not in ("beta", "bias", "gate") else [f"{name}__u[{j}]" for j in range(n)]
        return names


def constrain(theta: np.ndarray, layout: Layout) -> tuple[ConstrainedParams, float]:
    """Map unconstrained ``theta`` to model parameters plus log |Jacobian|."""
    theta = layout.check(theta)
    cfg, s = layout.cfg, layout.slices
    log_jac = 0.0

    def positive(name):
        nonlocal log_jac
        u = theta[s[name]]
        log_jac += float(u.sum())
        return np.exp(u)

    def unit(name):
        nonlocal log_jac
        u = theta[s[name]]
        log_jac += float(np.sum(log_sigmoid(u) + log_sigmoid(-u)))
        return sigmoid(u)

    def simplex(name):
        nonlocal log_jac
        x, _, lj = stick_breaking(theta[s[name]])
        log_jac += lj
        return x

    lam = positive("lambda_ridge")[0]
    alpha = unit("alpha")[0]
    omega_s = simplex("omega_S")
    omega_f = simplex("omega_F")
    shift = positive("shift")
    base = positive("base")
    beta_hat = float(theta[s["beta_hat"]][0]) if cfg.variant == SCIENCE else 0.0
    beta = theta[s["beta"]].copy()
    bias = theta[s["bias"]].copy()
    gate_mu = unit("gate_mu")[0]
    gate_kappa = positive("gate_kappa")[0]
    phi = positive("phi")[0]
    gate = unit("gate")
    params = ConstrainedParams(
        lambda_ridge=float(lam),
        alpha=float(alpha),
        omega_S=omega_s,
        omega_F=omega_f,
        base=base,
        shift=shift,
        beta_hat=beta_hat,
        beta=beta,
        bias=bias,
        gate_mu=float(gate_mu),
        gate_kappa=float(gate_kappa),
        phi=float(phi),
        gate=gate,
    )
    return params, log_jac


def unconstrain(p: ConstrainedParams, layout: Layout) -> np.ndarray:
    """Inverse of :func:`constrain`."""
    cfg, s = layout.cfg, layout.slices
    theta = np.empty(layout.size)
    theta[s["lambda_ridge"]] = math.log(p.lambda_ridge)
    theta[s["alpha"]] = logit(p.alpha)
    theta[s["omega_S"]] = stick_breaking_inverse(p.omega_S)
    theta[s["omega_F"]] = stick_breaking_inverse(p.omega_F)
    theta[s["shift"]] = np.log(p.shift)
    theta[s["base"]] = np.log(p.base)
    if cfg.variant == SCIENCE:
        theta[s["beta_hat"]] = p.beta_hat
    theta[s["beta"]] = p.beta
    theta[s["bias"]] = p.bias
    theta[s["gate_mu"]] = logit(p.gate_mu)
    theta[s["gate_kappa"]] = math.log(p.gate_kappa)
    theta[s["phi"]] = math.log(p.phi)
    theta[s["gate"]] = logit(p.gate)
    return theta


def constrained_names(layout: Layout, paper_ids: Sequence[str]) -> list[str]:
    cfg = layout.cfg
    K = cfg.K
    names = ["lambda_ridge", "alpha"]
    names += [f"omega_S[{k}]" for k in range(K)]
    names += [f"omega_F[{k}]" for k in range(K)]
    names += [f"shift[{k}]" for k in range(K)]
    names += [f"base[{k}]" for k in range(K)]
    if cfg.variant == SCIENCE:
        names += ["beta_hat"]
        names += [f"beta[{g}]" for g in cfg.groups]
        names += [f"bias[{g}]" for g in cfg.groups]
    else:
        names += [f"beta[{g}]" for g in cfg.groups]
        names += ["bias"]
    names += ["gate_mu", "gate_kappa", "phi"]
    names += [f"gate[{pid}]" for pid in paper_ids]
    return names


def flatten_params(p: ConstrainedParams, cfg: ModelConfig) -> np.ndarray:
    """Constrained values in the order of :func:`constrained_names`."""
    parts = [[p.lambda_ridge, p.alpha], p.omega_S, p.omega_F, p.shift, p.base]
    if cfg.variant == SCIENCE:
        parts.append([p.beta_hat])
    parts += [p.beta, p.bias, [p.gate_mu, p.gate_kappa, p.phi], p.gate]
    return np.concatenate([np.asarray(x, dtype=float).ravel() for x in parts])


def unflatten_params(row: np.ndarray, cfg: ModelConfig, n_papers: int) -> ConstrainedParams:
    K, G = cfg.K, cfg.n_groups
    row = np.asarray(row, dtype=float)
    pos = 0

    def take(n):
        nonlocal pos
        out = row[pos : pos + n]
        pos += n
        return out

    lam, alpha = take(2)
    omega_s, omega_f, shift, base = take(K), take(K), take(K), take(K)
    beta_hat = float(take(1)[0]) if cfg.variant == SCIENCE else 0.0
    beta = take(G)
    bias = take(G if cfg.variant == SCIENCE else 1)
    gate_mu, gate_kappa, phi = take(3)
    gate = take(n_papers)
    return ConstrainedParams(
        float(lam), float(alpha), omega_s.copy(), omega_f.copy(), base.copy(), shift.copy(),
        beta_hat, beta.copy(), bias.copy(), float(gate_mu), float(gate_kappa), float(phi), gate.copy(),
    )


# --- per-record reference path -------------------------------------------------


def _features(rec: PaperRecord, cfg: ModelConfig) -> np.ndarray:
    x = np.asarray(rec.group, dtype=float)
    if x.shape != (cfg.n_groups,):
        raise DataError(f"paper {rec.id}: expected {cfg.n_groups} features, got shape {x.shape}")
    if cfg.feature_center is not None:
        x = (x - np.asarray(cfg.feature_center)) / np.asarray(cfg.feature_scale)
    return x


def _group_index(rec: PaperRecord, cfg: ModelConfig) -> int:
    try:
        return cfg.groups.index(rec.group)
    except ValueError:
        raise DataError(f"paper {rec.id}: unknown field {rec.group!r}; expected one of {cfg.groups}") from None


def linear_predictor(rec: PaperRecord, p: ConstrainedParams, cfg: ModelConfig) -> float:
    """log of the paper's base citation rate."""
    if cfg.variant == SCIENCE:
        f = _group_index(rec, cfg)
        return float(p.beta[f] * float(rec.reproduced) + p.bias[f])
    x = _features(rec, cfg)
    return float(x @ np.asarray(p.beta) + np.asarray(p.bias).ravel()[0])


def style_exponent(t, shift):
    return np.maximum(np.asarray(t, dtype=float) - shift, 0.0)


def paper_loglik_given_style(rec: PaperRecord, k: int, p: ConstrainedParams, cfg: ModelConfig, index: int) -> float:
    """ZINB log-likelihood of one paper's observed years under style ``k``.

    ``index`` selects the paper's gate in ``p.gate``.
    """
    if not 0 <= k < cfg.K:
        raise IndexError(f"style index {k} outside [0, {cfg.K})")
    log_mu = linear_predictor(rec, p, cfg)
    gate = float(p.gate[index])
    total = 0.0
    for t in range(min(cfg.T, rec.counts.size)):
        if not rec.observed[t]:
            continue
        rate = math.exp(log_mu + float(style_exponent(t, p.shift[k])) * math.log(p.base[k]))
        total += dists.zinb_logpmf(int(rec.counts[t]), gate, rate, p.phi)
    return total


def collapsed_loglik(rec: PaperRecord, p: ConstrainedParams, cfg: ModelConfig, index: int) -> float:
    """Paper log-likelihood with the style indicator summed out."""
    omega = p.omega_S if rec.reproduced else p.omega_F
    with np.errstate(divide="ignore"):
        terms = [math.log(omega[k]) if omega[k] > 0 else -math.inf for k in range(cfg.K)]
    terms = [terms[k] + paper_loglik_given_style(rec, k, p, cfg, index) for k in range(cfg.K)]
    return float(logsumexp(terms))


def prior_families(cfg: ModelConfig) -> dict[str, DistParams]:
    """Prior distribution of each top-level parameter (conditionals excluded)."""
    shape, rate = cfg.gamma_base
    return {
        "lambda_ridge": DistParams(Family.HALF_CAUCHY, (1.0,)),
        "alpha": DistParams(Family.BETA, (1.0, 10.0)),
        "shift": DistParams(Family.EXPONENTIAL, (cfg.laplace_scale,)),
        "base": DistParams(Family.GAMMA, (shape, rate)),
        "beta_hat": DistParams(Family.NORMAL, (0.0, 1.0)),
        "bias": DistParams(Family.CAUCHY, (0.0, 1.0)),
        "gate_mu": DistParams(Family.UNIFORM01),
        "gate_kappa": DistParams(Family.GAMMA, (1.0, 20.0)),
        "phi": DistParams(Family.HALF_CAUCHY, (5.0,)),
    }


def log_prior_terms(p: ConstrainedParams, cfg: ModelConfig) -> dict[str, float]:
    """Prior log-density of every parameter block, via the ``dists`` module."""
    pri = prior_families(cfg)
    terms = {}
    for name in ("lambda_ridge", "alpha", "gate_mu", "gate_kappa", "phi"):
        terms[name] = float(dists.prior_logpdf(pri[name], getattr(p, name)))
    dir_d = DistParams(Family.DIRICHLET, (p.alpha, cfg.K))
    terms["omega_S"] = float(dists.prior_logpdf(dir_d, p.omega_S))
    terms["omega_F"] = float(dists.prior_logpdf(dir_d, p.omega_F))
    terms["shift"] = float(np.sum(dists.prior_logpdf(pri["shift"], p.shift)))
    terms["base"] = float(np.sum(dists.prior_logpdf(pri["base"], p.base)))
    sd = math.sqrt(p.lambda_ridge)
    if cfg.variant == SCIENCE:
        terms["beta_hat"] = float(dists.prior_logpdf(pri["beta_hat"], p.beta_hat))
        beta_d = DistParams(Family.NORMAL, (p.beta_hat, sd))
    else:
        beta_d = DistParams(Family.NORMAL, (0.0, sd))
    terms["beta"] = float(np.sum(dists.prior_logpdf(beta_d, p.beta)))
    terms["bias"] = float(np.sum(dists.prior_logpdf(pri["bias"], p.bias)))
    terms["gate"] = float(np.sum(dists.beta_proportion_logpdf(p.gate, p.gate_mu, p.gate_kappa)))
    return terms


def joint_terms(theta: np.ndarray, data: Sequence[PaperRecord], cfg: ModelConfig) -> dict[str, float]:
    """Every additive term of the joint log-density, per-record path."""
    layout = Layout.build(cfg, len(data))
    p, log_jac = constrain(theta, layout)
    terms = {f"prior:{k}": v for k, v in log_prior_terms(p, cfg).items()}
    for i, rec in enumerate(data):
        try:
            terms[f"lik:{rec.id}"] = collapsed_loglik(rec, p, cfg, i)
        except dists.DomainError:
            terms[f"lik:{rec.id}"] = math.nan
    terms["log_jacobian"] = log_jac
    return terms


def first_nonfinite(terms: dict[str, float]) -> str | None:
    for name, value in terms.items():
        if not math.isfinite(value):
            return name
    return None


def joint_log_density(theta: np.ndarray, data: Sequence[PaperRecord], cfg: ModelConfig) -> float:
    """Unnormalized log posterior in unconstrained coordinates."""
    return CitationModel(cfg, data).log_density(theta)


# --- vectorized path -----------------------------------------------------------


class CitationModel:
    """Joint log-density and gradient over a fixed dataset.

    Only observed (paper, year) cells are stored, grouped by paper; the
    per-cell mixture loop runs in a compiled kernel. Instances are
    immutable after construction and picklable, so chains may evaluate them
    in separate processes.
    """

    def __init__(self, cfg: ModelConfig, data: Sequence[PaperRecord]):
        self.cfg = cfg
        self.data = tuple(data)
        self.layout = Layout.build(cfg, len(self.data))
        N, T = len(self.data), cfg.T
        Y = np.zeros((N, T))
        obs = np.zeros((N, T), dtype=bool)
        for i, rec in enumerate(self.data):
            n = min(T, rec.counts.size)
            obs[i, :n] = rec.observed[:n]
            Y[i, :n] = np.where(rec.observed[:n], rec.counts[:n], 0)
        self.Y = Y
        self.observed = obs
        cell_i, cell_t = np.nonzero(obs)  # row-major, so grouped by paper
        self.starts = np.searchsorted(cell_i, np.arange(N + 1)).astype(np.int64)
        self.cell_t = cell_t.astype(np.int64)
        self.cell_y = Y[cell_i, cell_t]
        self.y_pos = self.cell_y[self.cell_y > 0]
        self.n_pos = np.bincount(cell_i[self.cell_y > 0], minlength=N).astype(float)
        self.lgamma_y1 = float(gammaln(self.y_pos + 1.0).sum())
        self.success = np.array([rec.reproduced for rec in self.data], dtype=bool)
        self.t = np.arange(T, dtype=float)
        self.success_f = self.success.astype(float)
        if cfg.variant == SCIENCE:
            self.group_idx = np.array([_group_index(rec, cfg) for rec in self.data], dtype=np.int64)
            self.X = np.zeros((N, 0))
        else:
            self.group_idx = np.zeros(N, dtype=np.int64)
            self.X = np.array([_features(rec, cfg) for rec in self.data]).reshape(N, cfg.n_groups)

    @property
    def dim(self) -> int:
        return self.layout.size

    def __call__(self, theta):
        return self.log_density_and_grad(theta)

    def log_density(self, theta) -> float:
        return self._evaluate(theta, want_grad=False)[0]

    def log_density_and_grad(self, theta) -> tuple[float, np.ndarray]:
        return self._evaluate(theta, want_grad=True)

    def _evaluate(self, theta, want_grad: bool):
        theta = self.layout.check(theta)
        cfg = self.cfg
        lp, grad = _kernel.joint(
            theta, cfg.variant == SCIENCE, cfg.K, cfg.n_groups, float(cfg.laplace_scale),
            float(cfg.gamma_base[0]), float(cfg.gamma_base[1]), self.group_idx, self.success_f, self.X,
            self.starts, self.cell_t, self.cell_y, self.lgamma_y1, self.n_pos, want_grad,
        )
        return float(lp), (grad if want_grad else None)

    def style_responsibilities(self, theta) -> np.ndarray:
        """Posterior style probabilities per paper given ``theta`` (N x K)."""
        p, _ = constrain(theta, self.layout)
        rows = []
        for i, rec in enumerate(self.data):
            omega = p.omega_S if rec.reproduced else p.omega_F
            with np.errstate(divide="ignore"):
                a = np.log(omega) + np.array(
                    [paper_loglik_given_style(rec, k, p, self.cfg, i) for k in range(self.cfg.K)]
                )
            rows.append(np.exp(a - logsumexp(a)))
        return np.array(rows)


def with_feature_scaling(cfg: ModelConfig, data: Sequence[PaperRecord]) -> ModelConfig:
    """Return ``cfg`` with continuous ML features z-scored over ``data``.

    Binary indicators keep their 0/1 coding.
    """
    if cfg.variant != ML:
        return cfg
    X = np.array([np.asarray(r.group, dtype=float) for r in data])
    center = np.zeros(cfg.n_groups)
    scale = np.ones(cfg.n_groups)
    continuous = {name for name, _, cont in ML_FEATURES if cont}
    for j, name in enumerate(cfg.groups):
        if name in continuous:
            sd = X[:, j].std()
            center[j] = X[:, j].mean()
            scale[j] = sd if sd > 0 else 1.0
    return replace(cfg, feature_center=tuple(center), feature_scale=tuple(scale))
