"""Bijections between unconstrained reals and constrained parameter spaces.

Each transform returns the constrained value together with the log absolute
Jacobian determinant. Gradient helpers map a gradient with respect to the
constrained value (or its log) back to unconstrained coordinates, including
the Jacobian term.
"""

from __future__ import annotations

import numpy as np


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(log_sigmoid(x))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _stick_offsets(k: int) -> np.ndarray:
    # Centering so that y = 0 maps to the uniform simplex.
    return np.log(np.arange(k - 1, 0, -1, dtype=float))


def stick_breaking(y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Map ``y`` (length K-1) to a K-simplex.

    Returns ``(x, log_x, log_jacobian)``. ``log_x`` is computed in log space so
    very sparse simplexes keep full relative precision.
    """
    y = np.asarray(y, dtype=float)
    k = y.size + 1
    if k == 1:
        return np.ones(1), np.zeros(1), 0.0
    u = y - _stick_offsets(k)
    log_z = log_sigmoid(u)
    log_1mz = log_sigmoid(-u)
    log_stick = np.concatenate(([0.0], np.cumsum(log_1mz)))
    log_x = np.concatenate((log_stick[:-1] + log_z, log_stick[-1:]))
    log_jac = float(np.sum(log_z + log_1mz + log_stick[:-1]))
    return np.exp(log_x), log_x, log_jac


def stick_breaking_inverse(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    k = x.size
    if k == 1:
        return np.zeros(0)
    # logit of each break is log(x_j) - log(mass after j); summing the tail
    # directly avoids cancellation in 1 - cumsum(x) for sparse simplexes
    after = np.cumsum(x[::-1])[::-1][1:]
    with np.errstate(divide="ignore"):
        return np.log(x[:-1]) - np.log(after) + _stick_offsets(k)


def stick_breaking_grad(y: np.ndarray, g_log_x: np.ndarray) -> np.ndarray:
    """Gradient wrt ``y`` of ``sum(g_log_x * log_x) + log_jacobian``."""
    y = np.asarray(y, dtype=float)
    k = y.size + 1
    if k == 1:
        return np.zeros(0)
    z = sigmoid(y - _stick_offsets(k))
    # tail[j] = sum of g_log_x over components after j (including the last)
    tail = np.cumsum(g_log_x[::-1])[::-1][1:]
    grad_obj = g_log_x[:-1] * (1.0 - z) - z * tail
    n_after = np.arange(k - 2, -1, -1, dtype=float)
    grad_jac = 1.0 - 2.0 * z - z * n_after
    return grad_obj + grad_jac
