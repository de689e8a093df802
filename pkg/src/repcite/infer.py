"""Posterior sampling for the citation model."""

from __future__ import annotations

import csv
import logging
import math
import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from repcite.diagnostics import summarize_chains
from repcite.model import (
    CitationModel,
    DataError,
    Layout,
    ModelConfig,
    PaperRecord,
    constrain,
    constrained_names,
    first_nonfinite,
    flatten_params,
    joint_terms,
    unconstrain,
    with_feature_scaling,
)
from repcite.nuts import SamplerError, run_chain
from repcite.simulate import draw_params, interior

log = logging.getLogger(__name__)

DIVERGENCE_WARN_FRACTION = 0.25
INIT_ATTEMPTS = 10


@dataclass(frozen=True)
class SamplerConfig:
    warmup: int = 500
    draws: int = 2250
    thin: int = 3
    chains: int = 4
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    n_jobs: int | None = 1

    def __post_init__(self):
        for name in ("warmup", "draws", "thin", "chains"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def retained_per_chain(self) -> int:
        return self.draws // self.thin


@dataclass
class PosteriorDraws:
    """Retained draws of all chains stacked row-wise."""

    values: np.ndarray
    names: list[str]
    chain_id: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray
    warnings: list[str] = field(default_factory=list)
    diagnostics: dict | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError(f"values shape {self.values.shape} does not match {len(self.names)} names")
        self.chain_id = np.asarray(self.chain_id, dtype=np.int64)
        self.divergent = np.asarray(self.divergent, dtype=bool)
        self._index = {n: j for j, n in enumerate(self.names)}

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain_id).size)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}; available: {', '.join(self.names)}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def by_chain(self, name: str) -> np.ndarray:
        col = self.column(name)
        ids = np.unique(self.chain_id)
        n = min(int(np.sum(self.chain_id == c)) for c in ids)
        return np.stack([col[self.chain_id == c][:n] for c in ids])

    def matching(self, prefix: str) -> list[str]:
        return [n for n in self.names if n.startswith(prefix)]

    def to_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "divergent", *self.names])
            for c, d, row in zip(self.chain_id, self.divergent, self.values):
                w.writerow([int(c), int(d), *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path) -> "PosteriorDraws":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = [row for row in r]
        if header[:2] != ["chain", "divergent"]:
            raise ValueError(f"{path}: expected leading 'chain,divergent' columns")
        arr = np.array([[float(v) for v in row] for row in rows]).reshape(len(rows), len(header))
        n_chains = len(np.unique(arr[:, 0])) if len(rows) else 0
        return cls(arr[:, 2:], header[2:], arr[:, 0].astype(int), arr[:, 1].astype(bool), np.full(n_chains, np.nan))


def grad_joint(theta, data: Sequence[PaperRecord], cfg: ModelConfig) -> np.ndarray:
    """Gradient of the joint log-density in unconstrained space.

    Raises ``FloatingPointError`` naming the first offending parameter when a
    component is not finite.
    """
    model = CitationModel(cfg, data)
    lp, grad = model.log_density_and_grad(theta)
    if not math.isfinite(lp):
        term = first_nonfinite(joint_terms(np.asarray(theta, float), data, cfg))
        raise FloatingPointError(f"joint log density is not finite (first non-finite term: {term})")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        name = model.layout.unconstrained_names()[bad[0]]
        raise FloatingPointError(f"gradient is not finite for {name}")
    return grad


def _chain_rngs(seed: int, chains: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(chains)]


def _run_one(args):
    fn, init, rng, sc = args
    return run_chain(
        fn, init, rng, sc.warmup, sc.draws, sc.thin,
        target_accept=sc.target_accept, max_depth=sc.max_tree_depth,
    )


def _picklable(obj) -> bool:
    try:
        pickle.dumps(obj)
    except Exception:
        return False
    return True


def run_chains(logp_grad, inits: Sequence[np.ndarray], sc: SamplerConfig, rngs=None):
    """Run one chain per init; chains run in worker processes when allowed."""
    rngs = rngs if rngs is not None else _chain_rngs(sc.seed, len(inits))
    jobs = [(logp_grad, np.asarray(init, float), rng, sc) for init, rng in zip(inits, rngs)]
    n_jobs = sc.n_jobs if sc.n_jobs is not None else (os.cpu_count() or 1)
    n_jobs = min(n_jobs, len(jobs))
    if n_jobs > 1 and _picklable(logp_grad):
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


def _collect(outputs, names, transform=None) -> PosteriorDraws:
    values, chain_id, divergent = [], [], []
    warnings = []
    for c, out in enumerate(outputs):
        draws = out.draws if transform is None else np.array([transform(q) for q in out.draws]).reshape(len(out.draws), -1)
        values.append(draws)
        chain_id.append(np.full(len(draws), c))
        divergent.append(out.divergent)
        frac = out.divergent.mean() if len(out.divergent) else 0.0
        if frac > DIVERGENCE_WARN_FRACTION:
            warnings.append(f"chain {c}: {frac:.0%} of retained transitions were divergent")
    values = np.concatenate(values) if values else np.empty((0, len(names)))
    if np.any(~np.isfinite(values)):
        raise SamplerError("non-finite value among retained draws")
    pd = PosteriorDraws(
        values, list(names), np.concatenate(chain_id), np.concatenate(divergent),
        np.array([o.step_size for o in outputs]), warnings,
    )
    pd.extras["accept_stat"] = np.concatenate([o.accept_stat for o in outputs])
    pd.extras["tree_depth"] = np.concatenate([o.tree_depth for o in outputs])
    pd.extras["n_leapfrog"] = np.concatenate([o.n_leapfrog for o in outputs])
    pd.extras["warmup_divergences"] = [o.warmup_divergences for o in outputs]
    for w in warnings:
        log.warning(w)
    return pd


def nuts_sample(logp_grad, init, sc: SamplerConfig, names: Sequence[str] | None = None) -> PosteriorDraws:
    """Sample ``sc.chains`` chains of a generic differentiable log density.

    ``init`` is one starting point shared by all chains, or one row per chain.
    Each chain draws from its own stream spawned from ``sc.seed``.
    """
    init = np.atleast_2d(np.asarray(init, dtype=float))
    inits = [init[0]] * sc.chains if init.shape[0] == 1 else list(init)
    if len(inits) != sc.chains:
        raise ValueError(f"got {len(inits)} initial points for {sc.chains} chains")
    outputs = run_chains(logp_grad, inits, sc)
    names = list(names) if names is not None else [f"x[{j}]" for j in range(init.shape[1])]
    pd = _collect(outputs, names)
    pd.diagnostics = diagnostics(pd) if sc.chains > 1 else None
    return pd


def diagnostics(pd: PosteriorDraws) -> dict[str, tuple[float, float]]:
    """Per-parameter (split R-hat, ESS). R-hat is NaN for a single chain."""
    rhat, ess = summarize_chains(pd.values, pd.chain_id)
    if pd.n_chains < 2:
        rhat = np.full_like(rhat, np.nan)
    return {name: (float(r), float(e)) for name, r, e in zip(pd.names, rhat, ess)}


def validate_dataset(data: Sequence[PaperRecord], cfg: ModelConfig) -> None:
    if not data:
        raise DataError("dataset is empty")
    seen = set()
    for rec in data:
        if rec.id in seen:
            raise DataError(f"duplicate paper id {rec.id!r}")
        seen.add(rec.id)
    # constructing the model checks group labels / feature shapes
    CitationModel(cfg, data)


def initial_point(model: CitationModel, rng: np.random.Generator) -> np.ndarray:
    """Draw a start from the prior; retry while the joint is not finite."""
    for _ in range(INIT_ATTEMPTS):
        p = interior(draw_params(model.cfg, len(model.data), rng))
        theta = unconstrain(p, model.layout)
        if np.all(np.isfinite(theta)):
            lp, grad = model.log_density_and_grad(theta)
            if math.isfinite(lp) and np.all(np.isfinite(grad)):
                return theta
    raise SamplerError(f"no finite initial point after {INIT_ATTEMPTS} prior draws")


def fit(
    data: Sequence[PaperRecord],
    cfg: ModelConfig,
    sc: SamplerConfig = SamplerConfig(),
    scale_features: bool = True,
) -> PosteriorDraws:
    """Fit the model with NUTS and return constrained-space draws.

    ML features are z-scored (continuous columns only) unless
    ``scale_features`` is false. The resolved config is stored in
    ``extras['config']``.
    """
    data = list(data)
    if scale_features:
        cfg = with_feature_scaling(cfg, data)
    validate_dataset(data, cfg)
    model = CitationModel(cfg, data)
    rngs = _chain_rngs(sc.seed, sc.chains)
    inits = [initial_point(model, rng) for rng in rngs]
    outputs = run_chains(model, inits, sc, rngs)
    layout = model.layout
    names = constrained_names(layout, [r.id for r in data])

    def to_constrained(theta):
        p, _ = constrain(theta, layout)
        return flatten_params(p, cfg)

    pd = _collect(outputs, names, to_constrained)
    pd.diagnostics = diagnostics(pd)
    pd.extras["config"] = cfg
    pd.extras["unconstrained"] = np.concatenate([o.draws for o in outputs])
    return pd


def constrained_at(pd: PosteriorDraws, row: int, cfg: ModelConfig, n_papers: int):
    from repcite.model import unflatten_params

    return unflatten_params(pd.values[row], cfg, n_papers)


__all__ = [
    "SamplerConfig",
    "PosteriorDraws",
    "SamplerError",
    "grad_joint",
    "nuts_sample",
    "diagnostics",
    "fit",
    "initial_point",
    "validate_dataset",
    "Layout",
]
