"""Compiled inner loop of the collapsed ZINB likelihood.

Observed cells are stored in paper-major order with ``starts`` giving each
paper's slice (CSR layout). Cells are evaluated in probability space when
that is safe and fall back to log space for extreme rates.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_BIG = 1e250
_TINY = 1e-280


@njit(cache=True, inline="always")
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def collapsed_loglik(starts, cell_t, cell_y, log_mu, log_g, log_1mg, log_w, growth, phi, want_grad):
    """Sum over papers of log sum_k w_k prod_t ZINB(y_t | ...), without the
    style-independent NB terms (lgamma and phi*log(phi)), which the caller adds.

    Returns (total, d_log_mu, d_u_gate, g_log_w, A_kt, g_phi). ``g_log_w`` holds
    the style responsibilities; ``A_kt`` collects d/d(log rate) by style and
    year; ``d_u_gate`` and ``g_phi`` cover the zero-cell terms and the
    log(m + phi) parts only.
    """
    N = starts.size - 1
    K = growth.shape[0]
    T = growth.shape[1]
    log_phi = math.log(phi)
    exp_growth = np.exp(growth)
    total = 0.0
    d_log_mu = np.zeros(N)
    d_u_gate = np.zeros(N)
    g_log_w = np.zeros((N, K))
    A_kt = np.zeros((K, T))
    g_phi = 0.0
    max_cells = 0
    for i in range(N):
        max_cells = max(max_cells, starts[i + 1] - starts[i])
    d_m = np.zeros((max_cells, K))
    d_phi = np.zeros(K)
    d_gate = np.zeros(K)
    a = np.zeros(K)
    for i in range(N):
        lo = starts[i]
        hi = starts[i + 1]
        g_i = math.exp(log_g[i])
        omg_i = math.exp(log_1mg[i])
        mu_i = math.exp(log_mu[i])
        for k in range(K):
            acc = log_w[i, k]
            dp = 0.0
            dg = 0.0
            for j in range(lo, hi):
                y = cell_y[j]
                t = cell_t[j]
                logm = log_mu[i] + growth[k, t]
                m = mu_i * exp_growth[k, t]
                if m < _BIG and m > _TINY:
                    mp = m + phi
                    lmp = math.log(mp)
                    s = m / mp
                    inv_mp = 1.0 / mp
                else:
                    lmp = _logaddexp(logm, log_phi)
                    s = math.exp(logm - lmp)
                    inv_mp = math.exp(-lmp)
                if y > 0:
                    acc += y * logm - (y + phi) * lmp
                    if want_grad:
                        d_m[j - lo, k] = y - (y + phi) * s
                        dp += -lmp - (y + phi) * inv_mp
                else:
                    log_p0 = phi * (log_phi - lmp)
                    p0 = math.exp(log_p0)
                    prob = g_i + omg_i * p0
                    if prob > _TINY:
                        cell = math.log(prob)
                        r0 = omg_i * p0 / prob
                        q = g_i * omg_i * (1.0 - p0) / prob
                    else:
                        cell = _logaddexp(log_g[i], log_1mg[i] + log_p0)
                        r0 = math.exp(log_1mg[i] + log_p0 - cell)
                        q = 0.0
                        if log_p0 < 0.0:
                            q = math.exp(log_g[i] + log_1mg[i] + math.log(-math.expm1(log_p0)) - cell)
                    acc += cell
                    if want_grad:
                        d_m[j - lo, k] = -r0 * phi * s
                        dp += r0 * (log_phi + 1.0 - lmp - phi * inv_mp)
                        dg += q
            a[k] = acc
            d_phi[k] = dp
            d_gate[k] = dg
        amax = a.max()
        if amax == -np.inf or math.isnan(amax):
            return amax, d_log_mu, d_u_gate, g_log_w, A_kt, g_phi
        ssum = 0.0
        for k in range(K):
            ssum += math.exp(a[k] - amax)
        L = amax + math.log(ssum)
        total += L
        if want_grad:
            for k in range(K):
                r = math.exp(a[k] - L)
                if r == 0.0:
                    continue
                g_log_w[i, k] = r
                g_phi += r * d_phi[k]
                d_u_gate[i] += r * d_gate[k]
                for j in range(lo, hi):
                    v = r * d_m[j - lo, k]
                    d_log_mu[i] += v
                    A_kt[k, cell_t[j]] += v
    return total, d_log_mu, d_u_gate, g_log_w, A_kt, g_phi


@njit(cache=True)
def digamma(x):
    """Digamma for x > 0: upward recurrence then the asymptotic series."""
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))))
    return acc + math.log(x) - 0.5 * inv - series


@njit(cache=True, inline="always")
def _log_sigmoid(u):
    if u >= 0.0:
        return -math.log1p(math.exp(-u))
    return u - math.log1p(math.exp(u))


@njit(cache=True)
def _stick_breaking(y, log_x):
    """Fill ``log_x`` (length K) from ``y`` (length K-1); return log |J|."""
    K = y.size + 1
    log_stick = 0.0
    log_jac = 0.0
    for j in range(K - 1):
        u = y[j] - math.log(K - 1 - j)
        lz = _log_sigmoid(u)
        l1z = _log_sigmoid(-u)
        log_x[j] = log_stick + lz
        log_jac += lz + l1z + log_stick
        log_stick += l1z
    log_x[K - 1] = log_stick
    return log_jac


@njit(cache=True)
def _stick_breaking_grad(y, g_log_x, out):
    """Gradient of sum(g_log_x * log_x) + log |J| with respect to ``y``."""
    K = y.size + 1
    tail = g_log_x[K - 1]
    for j in range(K - 2, -1, -1):
        z = math.exp(_log_sigmoid(y[j] - math.log(K - 1 - j)))
        n_after = K - 2 - j
        out[j] = g_log_x[j] * (1.0 - z) - z * tail + 1.0 - 2.0 * z - z * n_after
        tail += g_log_x[j]


@njit(cache=True)
def joint(theta, science, K, G, laplace_b, gshape, grate, group_idx, success, X,
          starts, cell_t, cell_y, lgamma_y1, n_pos, want_grad):
    """Joint log density in unconstrained space and (optionally) its gradient.

    Block order matches the model layout: lambda, alpha, omega_S, omega_F,
    shift, base, [beta_hat,] beta, bias, gate_mu, gate_kappa, phi, gate.
    """
    N = starts.size - 1
    T = 0
    for j in range(cell_t.size):
        T = max(T, cell_t[j] + 1)
    grad = np.zeros(theta.size)
    # block offsets
    o_lam = 0
    o_alpha = 1
    o_ws = 2
    o_wf = o_ws + K - 1
    o_shift = o_wf + K - 1
    o_base = o_shift + K
    p = o_base + K
    if science:
        o_bhat = p
        o_beta = p + 1
        o_bias = o_beta + G
        o_gmu = o_bias + G
    else:
        o_bhat = -1
        o_beta = p
        o_bias = p + G
        o_gmu = o_bias + 1
    o_gk = o_gmu + 1
    o_phi = o_gk + 1
    o_gate = o_phi + 1
    lp = 0.0

    u_lam = theta[o_lam]
    lam = math.exp(u_lam)
    u_alpha = theta[o_alpha]
    log_alpha = _log_sigmoid(u_alpha)
    log_1m_alpha = _log_sigmoid(-u_alpha)
    alpha = math.exp(log_alpha)
    u_gmu = theta[o_gmu]
    gmu = math.exp(_log_sigmoid(u_gmu))
    u_gk = theta[o_gk]
    gk = math.exp(u_gk)
    log_phi = theta[o_phi]
    phi = math.exp(log_phi)

    # lambda ~ HalfCauchy(0, 1); alpha ~ Beta(1, 10); gate_mu ~ U(0, 1)
    lp += math.log(2.0 / math.pi) - math.log1p(lam * lam) + u_lam
    g_lam = -2.0 * lam / (1.0 + lam * lam)
    lp += math.log(10.0) + 9.0 * log_1m_alpha + log_alpha + log_1m_alpha
    lp += _log_sigmoid(u_gmu) + _log_sigmoid(-u_gmu)
    # gate_kappa ~ Gamma(1, 20); phi ~ HalfCauchy(0, 5)
    lp += math.log(20.0) - 20.0 * gk + u_gk
    g_gk = -20.0
    lp += math.log(2.0 / (5.0 * math.pi)) - math.log1p((phi / 5.0) ** 2) + log_phi
    g_phi = -2.0 * phi / (25.0 + phi * phi)

    # style pool: shift ~ Exponential, base ~ Gamma(shape, rate)
    shift = np.exp(theta[o_shift:o_shift + K])
    log_base = theta[o_base:o_base + K].copy()
    g_shift = np.full(K, -1.0 / laplace_b)
    g_u_base = np.zeros(K)
    for k in range(K):
        lp += -math.log(laplace_b) - shift[k] / laplace_b + theta[o_shift + k]
        lp += gshape * math.log(grate) - math.lgamma(gshape) + gshape * log_base[k] - grate * math.exp(log_base[k])
        g_u_base[k] = gshape - grate * math.exp(log_base[k])

    # mixture weights ~ symmetric Dirichlet(alpha)
    log_ws = np.zeros(K)
    log_wf = np.zeros(K)
    g_alpha = 0.0
    if K > 1:
        lp += _stick_breaking(theta[o_ws:o_ws + K - 1], log_ws)
        lp += _stick_breaking(theta[o_wf:o_wf + K - 1], log_wf)
        sum_log_w = log_ws.sum() + log_wf.sum()
        lp += 2.0 * (math.lgamma(K * alpha) - K * math.lgamma(alpha)) + (alpha - 1.0) * sum_log_w
        g_alpha = 2.0 * K * (digamma(K * alpha) - digamma(alpha)) + sum_log_w

    # coefficients: beta ~ N(beta_hat, lambda), bias ~ Cauchy(0, 1)
    beta = theta[o_beta:o_beta + G]
    n_bias = G if science else 1
    bias = theta[o_bias:o_bias + n_bias]
    beta_hat = 0.0
    half_log_2pi = 0.5 * math.log(2.0 * math.pi)
    if science:
        beta_hat = theta[o_bhat]
        lp += -half_log_2pi - 0.5 * beta_hat * beta_hat
    ss = 0.0
    sum_resid = 0.0
    for f in range(G):
        r = beta[f] - beta_hat
        ss += r * r
        sum_resid += r
        grad[o_beta + f] = -r / lam
    lp += -G * (half_log_2pi + 0.5 * u_lam) - 0.5 * ss / lam
    g_lam += -0.5 * G / lam + 0.5 * ss / (lam * lam)
    for f in range(n_bias):
        lp += -math.log(math.pi) - math.log1p(bias[f] * bias[f])
        grad[o_bias + f] = -2.0 * bias[f] / (1.0 + bias[f] * bias[f])

    # gates ~ BetaProportion(gate_mu, gate_kappa)
    a_sh = gmu * gk
    b_sh = (1.0 - gmu) * gk
    log_g = np.empty(N)
    log_1mg = np.empty(N)
    sum_lg = 0.0
    sum_l1g = 0.0
    betaln_ab = math.lgamma(a_sh) + math.lgamma(b_sh) - math.lgamma(a_sh + b_sh)
    for i in range(N):
        u = theta[o_gate + i]
        log_g[i] = _log_sigmoid(u)
        log_1mg[i] = _log_sigmoid(-u)
        sum_lg += log_g[i]
        sum_l1g += log_1mg[i]
        lp += a_sh * log_g[i] + b_sh * log_1mg[i] - betaln_ab
        g = math.exp(log_g[i])
        grad[o_gate + i] = a_sh * (1.0 - g) - b_sh * g - g * n_pos[i]

    # likelihood
    log_mu = np.empty(N)
    for i in range(N):
        if science:
            f = group_idx[i]
            log_mu[i] = beta[f] * success[i] + bias[f]
        else:
            v = bias[0]
            for c in range(G):
                v += X[i, c] * beta[c]
            log_mu[i] = v
    growth = np.empty((K, T))
    for k in range(K):
        for t in range(T):
            growth[k, t] = max(t - shift[k], 0.0) * log_base[k]
    log_w = np.empty((N, K))
    for i in range(N):
        for k in range(K):
            log_w[i, k] = log_ws[k] if success[i] > 0.5 else log_wf[k]
    total, d_log_mu, d_gate_ll, resp, A_kt, g_phi_ll = collapsed_loglik(
        starts, cell_t, cell_y, log_mu, log_g, log_1mg, log_w, growth, phi, want_grad
    )
    const = -lgamma_y1
    sum_npos = 0.0
    for i in range(N):
        const += n_pos[i] * (phi * log_phi - math.lgamma(phi) + log_1mg[i])
        sum_npos += n_pos[i]
    for j in range(cell_y.size):
        if cell_y[j] > 0:
            const += math.lgamma(cell_y[j] + phi)
    lp += total + const
    if not want_grad or not math.isfinite(lp):
        if want_grad:
            grad[:] = np.nan
        return lp, grad

    psi_ab = digamma(a_sh + b_sh)
    d_a = sum_lg - N * (digamma(a_sh) - psi_ab)
    d_b = sum_l1g - N * (digamma(b_sh) - psi_ab)
    g_gmu = gk * (d_a - d_b)
    g_gk += gmu * d_a + (1.0 - gmu) * d_b

    g_phi += g_phi_ll + sum_npos * (log_phi + 1.0 - digamma(phi))
    for j in range(cell_y.size):
        if cell_y[j] > 0:
            g_phi += digamma(cell_y[j] + phi)
    for k in range(K):
        for t in range(T):
            if t > shift[k]:
                g_u_base[k] += A_kt[k, t] * (t - shift[k])
                g_shift[k] -= log_base[k] * A_kt[k, t]
    g_log_ws = np.full(K, alpha - 1.0)
    g_log_wf = np.full(K, alpha - 1.0)
    for i in range(N):
        grad[o_gate + i] += d_gate_ll[i]
        for k in range(K):
            if success[i] > 0.5:
                g_log_ws[k] += resp[i, k]
            else:
                g_log_wf[k] += resp[i, k]
        if science:
            f = group_idx[i]
            grad[o_beta + f] += d_log_mu[i] * success[i]
            grad[o_bias + f] += d_log_mu[i]
        else:
            for c in range(G):
                grad[o_beta + c] += X[i, c] * d_log_mu[i]
            grad[o_bias] += d_log_mu[i]

    grad[o_lam] = g_lam * lam + 1.0
    grad[o_alpha] = g_alpha * alpha * (1.0 - alpha) - 9.0 * alpha + (1.0 - 2.0 * alpha)
    if K > 1:
        _stick_breaking_grad(theta[o_ws:o_ws + K - 1], g_log_ws, grad[o_ws:o_ws + K - 1])
        _stick_breaking_grad(theta[o_wf:o_wf + K - 1], g_log_wf, grad[o_wf:o_wf + K - 1])
    for k in range(K):
        grad[o_shift + k] = g_shift[k] * shift[k] + 1.0
        grad[o_base + k] = g_u_base[k]
    if science:
        grad[o_bhat] = sum_resid / lam - beta_hat
    grad[o_gmu] = g_gmu * gmu * (1.0 - gmu) + 1.0 - 2.0 * gmu
    grad[o_gk] = g_gk * gk + 1.0
    grad[o_phi] = g_phi * phi + 1.0
    return lp, grad
