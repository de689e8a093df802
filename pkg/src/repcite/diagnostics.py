"""Split R-hat and effective sample size for multi-chain MCMC output."""

from __future__ import annotations

import numpy as np


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    centered = x - x.mean()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def split_chains(chains: np.ndarray) -> np.ndarray:
    """(m, n) -> (2m, n//2), dropping the middle draw for odd n."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    half = chains.shape[1] // 2
    return np.concatenate([chains[:, :half], chains[:, -half:]], axis=0)


def split_rhat(chains: np.ndarray) -> float:
    """Split potential scale reduction for one scalar quantity.

    ``chains`` has shape (n_chains, n_draws). Returns NaN with fewer than two
    chains, fewer than four draws per chain, or zero within-chain variance.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if m < 2 or n < 4:
        return float("nan")
    sp = split_chains(chains)
    n_half = sp.shape[1]
    means = sp.mean(axis=1)
    within = sp.var(axis=1, ddof=1).mean()
    between = n_half * means.var(ddof=1)
    if not np.isfinite(within) or within <= 0:
        return float("nan")
    var_plus = (n_half - 1) / n_half * within + between / n_half
    return float(np.sqrt(var_plus / within))


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence estimator.

    Returns 0.0 for a quantity with no within-chain variation.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float("nan")
    acov = np.array([_autocovariance(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    if not np.isfinite(mean_var) or mean_var <= 0:
        return 0.0
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    rho = np.empty(n)
    rho[0] = 1.0
    rho[1:] = 1.0 - (mean_var - acov[:, 1:].mean(axis=0)) / var_plus
    # sum of adjacent pairs, truncated at the first negative pair
    total = 0.0
    prev_pair = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev_pair)  # monotone
        total += pair
        prev_pair = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 1 else tau
    return float(m * n / tau)


def summarize_chains(values: np.ndarray, chain_id: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (R-hat, ESS) for a stacked draws matrix."""
    ids = np.unique(chain_id)
    counts = [np.sum(chain_id == c) for c in ids]
    n = min(counts)
    stacked = np.stack([values[chain_id == c][:n] for c in ids])  # m x n x p
    rhat = np.array([split_rhat(stacked[:, :, j]) for j in range(values.shape[1])])
    ess = np.array([effective_sample_size(stacked[:, :, j]) for j in range(values.shape[1])])
    return rhat, ess
