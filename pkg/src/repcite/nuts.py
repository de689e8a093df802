"""No-U-Turn sampler with a diagonal Euclidean metric.

Trajectories grow by doubling in a random direction. Candidates are chosen by
multinomial sampling over trajectory states (biased progressive sampling
between the old tree and each new subtree, uniform within subtrees). The
generalized U-turn criterion is applied to every merged tree, including the
extra checks that straddle the two halves being merged.

Warm-up follows the usual windowed scheme: an initial fast interval that
only tunes the step size, a series of doubling slow windows that also
estimate the diagonal of the inverse metric, and a terminal fast interval.
The step size is tuned by dual averaging toward a target acceptance
statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LogDensityGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]

MAX_ENERGY_ERROR = 1000.0


class SamplerError(RuntimeError):
    """Sampling could not proceed."""


@dataclass
class _State:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Tree:
    # edges in build order: ``beg`` is adjacent to the existing trajectory
    beg: _State
    end: _State
    proposal: _State
    log_weight: float
    rho: np.ndarray
    n_leapfrog: int
    sum_accept: float
    valid: bool
    divergent: bool = False


@dataclass
class TransitionInfo:
    accept_stat: float
    n_leapfrog: int
    depth: int
    divergent: bool
    energy: float


def leapfrog(state: _State, eps: float, inv_mass: np.ndarray, logp_grad: LogDensityGrad) -> _State:
    """One leapfrog step; ``eps`` may be negative to integrate backwards."""
    p_half = state.p + 0.5 * eps * state.grad
    q = state.q + eps * inv_mass * p_half
    logp, grad = logp_grad(q)
    p = p_half + 0.5 * eps * grad
    return _State(q, p, float(logp), np.asarray(grad, dtype=float))


def hamiltonian(state: _State, inv_mass: np.ndarray) -> float:
    return -state.logp + 0.5 * float(np.dot(state.p * inv_mass, state.p))


def _no_uturn(p_sharp_a: np.ndarray, p_sharp_b: np.ndarray, rho: np.ndarray) -> bool:
    return float(np.dot(p_sharp_a, rho)) > 0 and float(np.dot(p_sharp_b, rho)) > 0


class NutsKernel:
    """Single-chain NUTS transition kernel."""

    def __init__(self, logp_grad: LogDensityGrad, inv_mass: np.ndarray, step_size: float, max_depth: int = 10):
        self.logp_grad = logp_grad
        self.inv_mass = np.asarray(inv_mass, dtype=float)
        self.step_size = float(step_size)
        self.max_depth = int(max_depth)

    def _build(self, start: _State, direction: int, depth: int, H0: float, rng: np.random.Generator) -> _Tree:
        inv_mass = self.inv_mass
        if depth == 0:
            new = leapfrog(start, direction * self.step_size, inv_mass, self.logp_grad)
            H = hamiltonian(new, inv_mass)
            if not math.isfinite(H):
                H = math.inf
            delta = H - H0
            divergent = delta > MAX_ENERGY_ERROR or not math.isfinite(delta)
            accept = 0.0 if divergent else (1.0 if delta <= 0 else math.exp(-delta))
            return _Tree(new, new, new, -delta, new.p.copy(), 1, accept, not divergent, divergent)

        first = self._build(start, direction, depth - 1, H0, rng)
        if not first.valid:
            return first
        second = self._build(first.end, direction, depth - 1, H0, rng)
        n_leapfrog = first.n_leapfrog + second.n_leapfrog
        sum_accept = first.sum_accept + second.sum_accept
        if not second.valid:
            second.n_leapfrog, second.sum_accept = n_leapfrog, sum_accept
            return second

        log_weight = float(np.logaddexp(first.log_weight, second.log_weight))
        if math.log(rng.uniform()) < second.log_weight - log_weight:
            proposal = second.proposal
        else:
            proposal = first.proposal
        rho = first.rho + second.rho
        valid = (
            _no_uturn(inv_mass * first.beg.p, inv_mass * second.end.p, rho)
            and _no_uturn(inv_mass * first.beg.p, inv_mass * second.beg.p, first.rho + second.beg.p)
            and _no_uturn(inv_mass * first.end.p, inv_mass * second.end.p, second.rho + first.end.p)
        )
        return _Tree(first.beg, second.end, proposal, log_weight, rho, n_leapfrog, sum_accept, valid)

    def transition(self, q: np.ndarray, logp: float, grad: np.ndarray, rng: np.random.Generator):
        inv_mass = self.inv_mass
        p0 = rng.standard_normal(q.size) / np.sqrt(inv_mass)
        init = _State(q, p0, logp, grad)
        H0 = hamiltonian(init, inv_mass)
        minus = plus = init
        proposal = init
        rho = p0.copy()
        log_weight = 0.0
        n_leapfrog, sum_accept = 0, 0.0
        divergent = False
        depth = 0
        while depth < self.max_depth:
            direction = 1 if rng.uniform() < 0.5 else -1
            start = plus if direction > 0 else minus
            tree = self._build(start, direction, depth, H0, rng)
            n_leapfrog += tree.n_leapfrog
            sum_accept += tree.sum_accept
            depth += 1
            if not tree.valid:
                divergent = tree.divergent
                break
            if math.log(rng.uniform()) < tree.log_weight - log_weight:
                proposal = tree.proposal
            log_weight = float(np.logaddexp(log_weight, tree.log_weight))
            # old tree and new subtree in time order: (bck, fwd)
            if direction > 0:
                bck_bck, bck_fwd, rho_bck = minus, plus, rho
                fwd_bck, fwd_fwd, rho_fwd = tree.beg, tree.end, tree.rho
                plus = tree.end
            else:
                fwd_bck, fwd_fwd, rho_fwd = minus, plus, rho
                bck_fwd, bck_bck, rho_bck = tree.beg, tree.end, tree.rho
                minus = tree.end
            rho = rho_bck + rho_fwd
            keep_going = (
                _no_uturn(inv_mass * bck_bck.p, inv_mass * fwd_fwd.p, rho)
                and _no_uturn(inv_mass * bck_bck.p, inv_mass * fwd_bck.p, rho_bck + fwd_bck.p)
                and _no_uturn(inv_mass * bck_fwd.p, inv_mass * fwd_fwd.p, rho_fwd + bck_fwd.p)
            )
            if not keep_going:
                break
        accept_stat = sum_accept / max(n_leapfrog, 1)
        energy = hamiltonian(proposal, inv_mass)
        info = TransitionInfo(accept_stat, n_leapfrog, depth, divergent, energy)
        return proposal.q, proposal.logp, proposal.grad, info


@dataclass
class DualAveraging:
    """Nesterov dual averaging of log step size."""

    target: float = 0.8
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    mu: float = 0.0
    counter: int = 0
    s_bar: float = 0.0
    x_bar: float = 0.0

    def restart(self, step_size: float) -> None:
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        # clamp so a flat target (accept always 1) cannot overflow exp
        x = min(self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma, 700.0)
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


@dataclass
class WarmupSchedule:
    """Iteration windows for metric adaptation."""

    n_warmup: int
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25
    window_ends: list = field(default_factory=list)

    def __post_init__(self):
        n = self.n_warmup
        if n < 20:
            self.init_buffer, self.term_buffer, self.base_window = n, 0, 0
            self.window_ends = []
            return
        if self.init_buffer + self.base_window + self.term_buffer > n:
            self.init_buffer = int(0.15 * n)
            self.term_buffer = int(0.1 * n)
            self.base_window = n - (self.init_buffer + self.term_buffer)
        ends = []
        start = self.init_buffer
        size = self.base_window
        last = n - self.term_buffer
        while start + size < last:
            nxt = start + 2 * size
            if nxt + 2 * size > last:  # stretch the final slow window to the terminal buffer
                ends.append(last)
                break
            ends.append(start + size)
            start += size
            size *= 2
        else:
            ends.append(last)
        self.window_ends = sorted(set(e for e in ends if e > self.init_buffer))

    def in_slow_window(self, it: int) -> bool:
        return bool(self.window_ends) and self.init_buffer <= it < self.window_ends[-1]


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized_variance(self) -> np.ndarray:
        n = self.n
        var = self.m2 / max(n - 1, 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def find_reasonable_step_size(
    q: np.ndarray, logp: float, grad: np.ndarray, inv_mass: np.ndarray, logp_grad: LogDensityGrad,
    rng: np.random.Generator, step_size: float = 1.0,
) -> float:
    """Heuristic initial step size: double or halve until the one-step
    acceptance probability crosses 0.8."""
    p = rng.standard_normal(q.size) / np.sqrt(inv_mass)
    state = _State(q, p, logp, grad)
    H0 = hamiltonian(state, inv_mass)

    def log_accept(eps):
        new = leapfrog(state, eps, inv_mass, logp_grad)
        H = hamiltonian(new, inv_mass)
        return H0 - H if math.isfinite(H) else -math.inf

    direction = 1 if log_accept(step_size) > math.log(0.8) else -1
    for _ in range(100):
        nxt = step_size * (2.0 ** direction)
        la = log_accept(nxt)
        if (direction == 1 and not la > math.log(0.8)) or (direction == -1 and la > math.log(0.8)):
            return nxt if direction == -1 else step_size
        step_size = nxt
        if step_size < 1e-14 or step_size > 1e7:
            break
    return step_size


@dataclass
class ChainOutput:
    draws: np.ndarray
    logp: np.ndarray
    divergent: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    warmup_divergences: int


def run_chain(
    logp_grad: LogDensityGrad,
    init: np.ndarray,
    rng: np.random.Generator,
    n_warmup: int,
    n_draws: int,
    thin: int = 1,
    target_accept: float = 0.8,
    max_depth: int = 10,
    init_step_size: float | None = None,
    inv_mass: np.ndarray | None = None,
    adapt: bool = True,
) -> ChainOutput:
    """Warm up and sample one chain; keep every ``thin``-th post-warm-up draw."""
    q = np.array(init, dtype=float)
    logp, grad = logp_grad(q)
    if not math.isfinite(logp) or not np.all(np.isfinite(grad)):
        raise SamplerError("log density or gradient is not finite at the initial point")
    inv_mass = np.ones(q.size) if inv_mass is None else np.asarray(inv_mass, dtype=float).copy()
    if init_step_size is None:
        step = find_reasonable_step_size(q, logp, grad, inv_mass, logp_grad, rng)
    else:
        step = float(init_step_size)
    kernel = NutsKernel(logp_grad, inv_mass, step, max_depth)
    da = DualAveraging(target=target_accept)
    da.restart(step)
    schedule = WarmupSchedule(n_warmup)
    welford = _Welford(q.size)
    warm_div = 0
    any_accepted = n_warmup == 0

    for it in range(n_warmup if adapt else 0):
        q, logp, grad, info = kernel.transition(q, logp, grad, rng)
        warm_div += info.divergent
        any_accepted = any_accepted or info.accept_stat > 0
        kernel.step_size = da.update(info.accept_stat)
        if schedule.in_slow_window(it):
            welford.add(q)
        if it + 1 in schedule.window_ends:
            kernel.inv_mass = welford.regularized_variance()
            welford = _Welford(q.size)
            kernel.step_size = find_reasonable_step_size(q, logp, grad, kernel.inv_mass, logp_grad, rng, kernel.step_size)
            da.restart(kernel.step_size)
    if adapt and n_warmup > 0:
        if not any_accepted:
            raise SamplerError("step size adaptation failed: every warm-up transition was rejected")
        kernel.step_size = da.final_step_size
        if not math.isfinite(kernel.step_size) or kernel.step_size <= 0:
            raise SamplerError("step size adaptation failed: non-finite step size")

    n_keep = n_draws // thin
    draws = np.empty((n_keep, q.size))
    logps = np.empty(n_keep)
    div = np.zeros(n_keep, dtype=bool)
    acc = np.empty(n_keep)
    depth = np.empty(n_keep, dtype=np.int64)
    nlf = np.empty(n_keep, dtype=np.int64)
    j = 0
    pending_div = False
    for it in range(n_draws):
        q, logp, grad, info = kernel.transition(q, logp, grad, rng)
        pending_div = pending_div or info.divergent
        if (it + 1) % thin == 0:
            draws[j], logps[j], acc[j] = q, logp, info.accept_stat
            depth[j], nlf[j] = info.depth, info.n_leapfrog
            div[j] = pending_div
            pending_div = False
            j += 1
    return ChainOutput(draws, logps, div, acc, depth, nlf, kernel.step_size, kernel.inv_mass.copy(), warm_div)
