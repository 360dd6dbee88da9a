"""Seed screening, chain planning and elliptical slice sampling in standard-normal space.

All chains of a level advance in lockstep so likelihood calls are batched,
but every chain draws its random numbers from its own stream keyed by
``(run_seed, level, chain)``.  Splitting chains across workers therefore
never changes a single draw.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from .model import TargetModel
from .schedule import ContractError, Level, log_beta

TWO_PI = 2.0 * math.pi

# stream purposes, kept disjoint from each other
CHAIN = 0
CONTROL = 1


class LevelCollapse(RuntimeError):
    """No previous-level sample survived seed screening."""


class SliceFailure(RuntimeError):
    """An elliptical slice transition exceeded its shrink budget."""


class Samples(NamedTuple):
    u: np.ndarray  # (m, n) standard-normal coordinates
    lnL: np.ndarray  # (m,) cached log-likelihoods

    def __len__(self) -> int:
        return self.lnL.shape[0]

    def take(self, idx) -> "Samples":
        return Samples(self.u[idx], self.lnL[idx])


class ChainPlan(NamedTuple):
    n_chains: int
    chain_length: int


def rng_stream(run_seed: int, level: int, index: int, purpose: int = CHAIN) -> np.random.Generator:
    """Independent generator for one (run, level, purpose, index) key."""
    key = [int(run_seed) & 0xFFFFFFFFFFFFFFFF, int(level), int(purpose), int(index)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def soft_truncation(ln_threshold: float, prior=None, jacobian: bool = False) -> Callable:
    """Log of ``min(L / T, 1)``, optionally plus the transform's log-Jacobian."""

    def log_soft(lnL, u):
        if ln_threshold == -math.inf:
            f = np.zeros_like(lnL)
        else:
            f = np.minimum(lnL - ln_threshold, 0.0)
        if jacobian:
            f = f + prior.log_jacobian(u)
        return f

    return log_soft


def hard_truncation(ln_level: float) -> Callable:
    """Log of the indicator ``1[L > l]``."""

    def log_indicator(lnL, u):
        return np.where(lnL > ln_level, 0.0, -np.inf)

    return log_indicator


def sample_prior(model: TargetModel, n: int, rng: np.random.Generator) -> Samples:
    u = rng.standard_normal((n, model.dim))
    return Samples(u, model.loglik_u(u))


def select_seeds(prev: Samples, prev_level: Level, cur_level: Level, rng: np.random.Generator) -> Samples:
    """Keep each previous-level sample with probability beta (order preserved)."""
    if len(prev) == 0:
        raise ContractError("no samples to screen")
    lb = log_beta(prev.lnL, prev_level.ln_threshold, cur_level.ln_threshold)
    keep = rng.random(len(prev)) < np.exp(lb)
    if not keep.any():
        raise LevelCollapse(f"no seeds survived screening into level {cur_level.index}")
    return prev.take(np.flatnonzero(keep))


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def plan_chains(n_target: int, n_seeds_raw: int) -> ChainPlan:
    """Largest candidate ``round(N/j)`` not above the seed count, then ``round(N/N_c)`` steps."""
    if n_target < 1 or n_seeds_raw < 1:
        raise ContractError("plan needs N >= 1 and at least one seed")
    n_c = 1
    for j in range(1, n_target + 1):
        cand = _round(n_target / j)
        if cand <= n_seeds_raw:
            n_c = cand
            break
    return ChainPlan(n_c, max(1, _round(n_target / n_c)))


def thin_seeds(seeds: Samples, n_chains: int, rng: np.random.Generator) -> Samples:
    if n_chains > len(seeds):
        raise ContractError(f"asked for {n_chains} seeds, only {len(seeds)} available")
    return seeds.take(rng.permutation(len(seeds))[:n_chains])


def _run_chain_group(u0, lnL0, n_steps, log_soft, model, rngs, max_shrink, brackets, offset=0):
    m, n = u0.shape
    u = u0.copy()
    lnL = lnL0.copy()
    f = log_soft(lnL, u)
    out_u = np.empty((m, n_steps, n))
    out_lnL = np.empty((m, n_steps))
    for t in range(n_steps):
        gamma = np.empty(m)
        alpha = np.empty(m)
        v = np.empty((m, n))
        for c, rng in enumerate(rngs):
            gamma[c] = 1.0 - rng.random()  # (0, 1]
            v[c] = rng.standard_normal(n)
            alpha[c] = rng.uniform(0.0, TWO_PI)
        with np.errstate(divide="ignore"):
            ln_y = f + np.log(gamma)
        lo = alpha - TWO_PI
        hi = alpha.copy()
        active = np.arange(m)
        for k in range(max_shrink + 1):
            a = alpha[active]
            xi = u[active] * np.cos(a)[:, None] + v[active] * np.sin(a)[:, None]
            lnL_xi = model.loglik_u(xi)
            f_xi = log_soft(lnL_xi, xi)
            ok = f_xi > ln_y[active]
            if ok.any():
                hit = active[ok]
                u[hit] = xi[ok]
                lnL[hit] = lnL_xi[ok]
                f[hit] = f_xi[ok]
            active = active[~ok]
            if active.size == 0:
                break
            if k == max_shrink:
                raise SliceFailure(f"shrink budget of {max_shrink} exhausted on chains "
                                   f"{(active + offset).tolist()}")
            neg = alpha[active] < 0.0
            lo[active[neg]] = alpha[active[neg]]
            hi[active[~neg]] = alpha[active[~neg]]
            for c in active:
                alpha[c] = rngs[c].uniform(lo[c], hi[c])
            if brackets is not None:
                brackets.append((active.copy(), lo[active].copy(), hi[active].copy()))
        if not np.all(f > ln_y):
            raise SliceFailure("accepted point violates its slice")
        out_u[:, t] = u
        out_lnL[:, t] = lnL
    return out_u.reshape(m * n_steps, n), out_lnL.reshape(m * n_steps)


def run_chains(seeds: Samples, n_steps: int, log_soft: Callable, model: TargetModel,
               rngs: Sequence[np.random.Generator], max_shrink: int = 1000,
               workers: int = 1, brackets: Optional[List] = None) -> Samples:
    """Run one chain per seed for ``n_steps`` elliptical slice transitions.

    The target in u-space is ``phi_n(u) * exp(log_soft(lnL(T(u)), u))``.
    Returned samples exclude the seeds and are ordered (chain, step).
    """
    m = len(seeds)
    if len(rngs) != m:
        raise ContractError("need exactly one generator per chain")
    if m == 0:
        return Samples(np.empty((0, model.dim)), np.empty(0))
    workers = max(1, min(int(workers), m))
    if workers == 1 or brackets is not None:
        return Samples(*_run_chain_group(seeds.u, seeds.lnL, n_steps, log_soft, model,
                                         list(rngs), max_shrink, brackets))
    bounds = np.linspace(0, m, workers + 1).astype(int)
    groups = [(bounds[w], bounds[w + 1]) for w in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda g: _run_chain_group(seeds.u[g[0]:g[1]], seeds.lnL[g[0]:g[1]], n_steps,
                                       log_soft, model, list(rngs[g[0]:g[1]]), max_shrink, None, g[0]),
            groups))
    return Samples(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def ess_step(u, lnL_u: float, log_soft: Callable, model: TargetModel, rng: np.random.Generator,
             max_shrink: int = 1000, brackets: Optional[List] = None):
    """Single elliptical slice transition from ``u``; returns ``(u', lnL')``."""
    seed = Samples(np.asarray(u, float).reshape(1, -1), np.array([lnL_u], float))
    out = run_chains(seed, 1, log_soft, model, [rng], max_shrink=max_shrink, brackets=brackets)
    return out.u[0], float(out.lnL[0])


def run_level(seeds: Samples, plan: ChainPlan, log_soft: Callable, model: TargetModel,
              run_seed: int, level: int, max_shrink: int = 1000, workers: int = 1) -> Samples:
    """Sample one level: ``plan.n_chains`` chains of ``plan.chain_length`` steps."""
    if len(seeds) != plan.n_chains:
        raise ContractError(f"plan expects {plan.n_chains} seeds, got {len(seeds)}")
    rngs = [rng_stream(run_seed, level, c) for c in range(plan.n_chains)]
    return run_chains(seeds, plan.chain_length, log_soft, model, rngs, max_shrink, workers)
