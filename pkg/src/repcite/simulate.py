"""Forward simulation of the citation model from its priors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from repcite import dists
from repcite.dists import DistParams, Family
from repcite.model import (
    SCIENCE,
    ConstrainedParams,
    ModelConfig,
    PaperRecord,
    _features,
    _group_index,
    prior_families,
)


@dataclass(frozen=True)
class DesignRow:
    group: object
    reproduced: bool
    observed: np.ndarray
    id: str | None = None
    pub_year: int = 2010


def draw_params(cfg: ModelConfig, n_papers: int, rng: np.random.Generator, fixed: dict | None = None) -> ConstrainedParams:
    """One joint draw of every parameter from the prior.

    ``fixed`` pins named parameters (scalars broadcast over vector blocks);
    downstream draws condition on the pinned values.
    """
    fixed = dict(fixed or {})
    pri = prior_families(cfg)
    K, G = cfg.K, cfg.n_groups

    def get(name, draw):
        if name in fixed:
            return fixed[name]
        return draw()

    def vec(name, n, draw):
        v = get(name, draw)
        return np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()

    lam = float(get("lambda_ridge", lambda: dists.sample(pri["lambda_ridge"], rng)))
    alpha = float(get("alpha", lambda: dists.sample(pri["alpha"], rng)))
    dir_d = DistParams(Family.DIRICHLET, (alpha, K))
    omega_s = vec("omega_S", K, lambda: dists.sample(dir_d, rng))
    omega_f = vec("omega_F", K, lambda: dists.sample(dir_d, rng))
    shift = vec("shift", K, lambda: dists.sample(pri["shift"], rng, K))
    base = vec("base", K, lambda: dists.sample(pri["base"], rng, K))
    sd = np.sqrt(lam)
    if cfg.variant == SCIENCE:
        beta_hat = float(get("beta_hat", lambda: dists.sample(pri["beta_hat"], rng)))
        beta = vec("beta", G, lambda: rng.normal(beta_hat, sd, G))
        bias = vec("bias", G, lambda: dists.sample(pri["bias"], rng, G))
    else:
        beta_hat = 0.0
        beta = vec("beta", G, lambda: rng.normal(0.0, sd, G))
        bias = vec("bias", 1, lambda: dists.sample(pri["bias"], rng, 1))
    gate_mu = float(get("gate_mu", lambda: dists.sample(pri["gate_mu"], rng)))
    gate_kappa = float(get("gate_kappa", lambda: dists.sample(pri["gate_kappa"], rng)))
    phi = float(get("phi", lambda: dists.sample(pri["phi"], rng)))
    gate_d = DistParams(Family.BETA_PROPORTION, (gate_mu, gate_kappa))
    gate = vec("gate", n_papers, lambda: dists.sample(gate_d, rng, n_papers))
    return ConstrainedParams(
        lambda_ridge=lam, alpha=alpha, omega_S=omega_s, omega_F=omega_f, base=base, shift=shift,
        beta_hat=beta_hat, beta=beta, bias=bias, gate_mu=gate_mu, gate_kappa=gate_kappa, phi=phi, gate=gate,
    )


def interior(p: ConstrainedParams, eps: float = 1e-10) -> ConstrainedParams:
    """Nudge boundary values (exact 0/1 from finite-precision prior draws)
    into the open domain so the unconstrained transform is finite."""

    def simplex(w):
        w = np.clip(w, eps, None)
        return w / w.sum()

    return p.copy(
        alpha=float(np.clip(p.alpha, eps, 1 - eps)),
        omega_S=simplex(p.omega_S),
        omega_F=simplex(p.omega_F),
        shift=np.clip(p.shift, eps, None),
        base=np.clip(p.base, eps, None),
        gate_mu=float(np.clip(p.gate_mu, eps, 1 - eps)),
        gate_kappa=max(p.gate_kappa, eps),
        phi=max(p.phi, eps),
        lambda_ridge=max(p.lambda_ridge, eps),
        gate=np.clip(p.gate, eps, 1 - eps),
    )


# counts beyond this cannot be held exactly as integers
MAX_COUNT = 2.0**53


def _log_rate(row: DesignRow, p: ConstrainedParams, cfg: ModelConfig) -> float:
    rec = PaperRecord("_", row.group, row.reproduced, row.pub_year, np.zeros(1), np.ones(1, bool))
    if cfg.variant == SCIENCE:
        f = _group_index(rec, cfg)
        return float(p.beta[f] * float(row.reproduced) + p.bias[f])
    return float(_features(rec, cfg) @ p.beta + p.bias[0])


def simulate_counts(design: Sequence[DesignRow], p: ConstrainedParams, cfg: ModelConfig, rng: np.random.Generator):
    """Draw styles and ZINB counts for each design row given parameters.

    Returns (records, style indices).
    """
    records, styles = [], []
    t = np.arange(cfg.T, dtype=float)
    for i, row in enumerate(design):
        omega = p.omega_S if row.reproduced else p.omega_F
        k = int(rng.choice(cfg.K, p=omega / omega.sum()))
        log_rate = _log_rate(row, p, cfg) + np.maximum(t - p.shift[k], 0.0) * np.log(p.base[k])
        with np.errstate(over="ignore"):
            rate = np.minimum(np.exp(log_rate), 1e300)
        nb = dists.sample_negbin2(rng, np.maximum(rate, 1e-300), np.full(cfg.T, p.phi))
        structural = rng.uniform(size=cfg.T) < p.gate[i]
        counts = np.where(structural, 0, nb)
        if not np.all(counts < MAX_COUNT):
            raise OverflowError(f"paper {row.id or i}: simulated count exceeds {MAX_COUNT:.0e} (log rate up to "
                                f"{log_rate.max():.1f}); parameter draw too extreme to simulate")
        counts = counts.astype(np.int64)
        observed = np.asarray(row.observed, dtype=bool)
        counts = np.where(observed, counts, 0)
        rid = row.id if row.id is not None else f"sim{i:04d}"
        records.append(PaperRecord(rid, row.group, row.reproduced, row.pub_year, counts, observed))
        styles.append(k)
    return records, np.array(styles)


def prior_predictive(
    cfg: ModelConfig,
    design: Iterable,
    rng: np.random.Generator,
    fixed: dict | None = None,
) -> tuple[list[PaperRecord], ConstrainedParams]:
    """Simulate a dataset by running the generative model forward.

    ``design`` items are :class:`DesignRow` or ``(group, reproduced,
    observed)`` tuples. Returns the synthetic records and the true parameters.
    """
    rows = [r if isinstance(r, DesignRow) else DesignRow(*r) for r in design]
    if not rows:
        raise ValueError("design must contain at least one paper")
    truth = draw_params(cfg, len(rows), rng, fixed)
    records, _ = simulate_counts(rows, truth, cfg, rng)
    return records, truth


def balanced_design(cfg: ModelConfig, n_papers: int, rng: np.random.Generator | None = None, min_years: int | None = None) -> list[DesignRow]:
    """Science design cycling through fields with alternating outcomes.

    With ``rng``, each paper's number of elapsed years is drawn uniformly from
    ``[min_years, T]``; otherwise every year is observed.
    """
    if cfg.variant != SCIENCE:
        raise ValueError("balanced_design builds science-variant designs")
    rows = []
    lo = cfg.T if min_years is None else min_years
    for i in range(n_papers):
        n_obs = cfg.T if rng is None else int(rng.integers(lo, cfg.T + 1))
        observed = np.arange(cfg.T) < n_obs
        group = cfg.groups[i % cfg.n_groups]
        reproduced = (i // cfg.n_groups) % 2 == 0
        rows.append(DesignRow(group, reproduced, observed, f"sim{i:04d}", 2020 - n_obs + 1))
    return rows
