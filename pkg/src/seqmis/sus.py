"""Subset simulation baseline read as multiple importance sampling.

Level ``i`` samples the hard-truncated prior ``prior * 1[L > l_i]``.  The
evidence is the layered sum ``sum_i phi_i E_i[min(L - l_i, l_{i+1} - l_i)]``
with ``l_0 = 0`` and the top layer closed at the largest observed likelihood.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .estimators import PosteriorDraws, effective_sample_size, logmeanexp, resample_indices
from .model import PriorSpec, TargetModel
from .sampler import (
    CONTROL,
    Samples,
    hard_truncation,
    plan_chains,
    rng_stream,
    run_level,
    sample_prior,
    thin_seeds,
)

log = logging.getLogger(__name__)

_PRIOR, _THIN, _RESAMPLE = 0, 1, 2


@dataclass
class SusConfig:
    n: int = 500
    p_c: float = 0.1
    max_levels: int = 100
    seed: int = 0
    stop_tol: float = 1e-6
    workers: int = 1
    max_shrink: int = 1000
    resampler: str = "multinomial"

    def __post_init__(self):
        if not 0.0 < self.p_c < 1.0:
            raise ValueError("p_c must lie in (0, 1)")
        if self.n < 2:
            raise ValueError("n must be at least 2")


@dataclass(frozen=True)
class SusLevel:
    index: int
    ln_l: float
    ln_phi_hat: float
    n_samples: int

    def to_dict(self) -> dict:
        return {"i": self.index, "ln_l": self.ln_l, "ln_phi_hat": self.ln_phi_hat,
                "n_samples": self.n_samples}


@dataclass
class SusTrace:
    levels: List[SusLevel]
    samples: List[Samples]
    prior: PriorSpec
    n_cal: int = 0

    @property
    def lnL(self) -> np.ndarray:
        return np.concatenate([s.lnL for s in self.samples])

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([s.u for s in self.samples])

    @property
    def n_total(self) -> int:
        return sum(len(s) for s in self.samples)

    @property
    def ln_top(self) -> float:
        return float(self.lnL.max())


@dataclass
class SusResult:
    trace: SusTrace
    ln_z: float
    posterior: PosteriorDraws
    levels_used: int

    @property
    def n_cal(self) -> int:
        return self.trace.n_cal


def log_layer(lnL, ln_lo: float, ln_hi: float) -> np.ndarray:
    """``ln(min(L - l_lo, l_hi - l_lo) * 1[L > l_lo])`` elementwise."""
    lnL = np.asarray(lnL, dtype=float)
    a = np.minimum(lnL, ln_hi)
    out = np.full(lnL.shape, -np.inf)
    inside = lnL > ln_lo
    if ln_lo == -math.inf:
        out[inside] = a[inside]
    else:
        with np.errstate(divide="ignore"):
            out[inside] = a[inside] + np.log(-np.expm1(ln_lo - a[inside]))
    return out


def log_layer_fractions(lnL, ln_levels, ln_top: float) -> np.ndarray:
    """``ln(min(L - l_i, l_{i+1} - l_i) 1[L > l_i] / L)`` per sample and layer, shape ``(m, I)``.

    For ``L <= l_top`` the fractions over all layers sum to one.
    """
    lnL = np.asarray(lnL, dtype=float)
    bounds = list(ln_levels) + [ln_top]
    cols = [log_layer(lnL, bounds[i], bounds[i + 1]) - lnL for i in range(len(ln_levels))]
    return np.column_stack(cols)


def _layer_terms(trace: SusTrace) -> List[np.ndarray]:
    bounds = [lv.ln_l for lv in trace.levels] + [trace.ln_top]
    return [log_layer(s.lnL, bounds[i], bounds[i + 1]) for i, s in enumerate(trace.samples)]


def sus_log_evidence(trace: SusTrace) -> float:
    parts = [lv.ln_phi_hat + logmeanexp(t) for lv, t in zip(trace.levels, _layer_terms(trace))]
    if len(parts) == 1:
        return parts[0]
    return float(logsumexp(parts))


def sus_posterior_weights(trace: SusTrace) -> PosteriorDraws:
    n_t = trace.n_total
    log_w = np.concatenate([
        math.log(n_t / len(s)) + lv.ln_phi_hat + t
        for lv, s, t in zip(trace.levels, trace.samples, _layer_terms(trace))
    ])
    weights = np.exp(log_w - logsumexp(log_w))
    return PosteriorDraws(log_w, weights, effective_sample_size(log_w))


def next_threshold(lnL, p_c: float, ln_current: float) -> Optional[float]:
    """Empirical (1 - p_c) quantile with a strict-exceedance set, or None if stuck."""
    desc = np.sort(np.asarray(lnL, dtype=float))[::-1]
    n_keep = min(max(int(math.floor(p_c * desc.size + 0.5)), 1), desc.size - 1)
    cand = desc[n_keep]
    if not np.any(desc > cand):
        below = desc[desc < desc[0]]
        if below.size == 0:
            return None
        cand = below[0]
    if cand <= ln_current:
        return None
    return float(cand)


def run_sus(model: TargetModel, config: Optional[SusConfig] = None) -> SusResult:
    cfg = config or SusConfig()
    start_count = model.eval_count
    blocks = [sample_prior(model, cfg.n, rng_stream(cfg.seed, 0, _PRIOR, CONTROL))]
    levels = [SusLevel(0, -math.inf, 0.0, len(blocks[0]))]
    finished = []  # evidence of closed layers

    while len(levels) < cfg.max_levels:
        cur, block = levels[-1], blocks[-1]
        tail = cur.ln_phi_hat + logmeanexp(log_layer(block.lnL, cur.ln_l, math.inf))
        total = float(logsumexp(finished + [tail]))
        if finished and tail - total < math.log(cfg.stop_tol):
            break
        ln_next = next_threshold(block.lnL, cfg.p_c, cur.ln_l)
        if ln_next is None:
            break
        survivors = np.flatnonzero(block.lnL > ln_next)
        finished.append(cur.ln_phi_hat + logmeanexp(log_layer(block.lnL, cur.ln_l, ln_next)))
        i = cur.index + 1
        plan = plan_chains(cfg.n, survivors.size)
        seeds = thin_seeds(block.take(survivors), plan.n_chains, rng_stream(cfg.seed, i, _THIN, CONTROL))
        new = run_level(seeds, plan, hard_truncation(ln_next), model, cfg.seed, i,
                        cfg.max_shrink, cfg.workers)
        ln_phi = cur.ln_phi_hat + math.log(survivors.size / len(block))
        levels.append(SusLevel(i, ln_next, ln_phi, len(new)))
        blocks.append(new)
        log.debug("sus level %d: ln l=%.6g ln phi=%.4f", i, ln_next, ln_phi)

    trace = SusTrace(levels, blocks, model.prior, model.eval_count - start_count)
    posterior = sus_posterior_weights(trace)
    rng = rng_stream(cfg.seed, len(levels), _RESAMPLE, CONTROL)
    idx = resample_indices(posterior.weights, max(1, int(posterior.ess)), rng, cfg.resampler)
    posterior.draws = trace.prior.to_physical(trace.u[idx])
    return SusResult(trace, sus_log_evidence(trace), posterior, len(levels))
