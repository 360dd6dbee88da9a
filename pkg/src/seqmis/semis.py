"""Sequential multiple importance sampling driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .estimators import (
    EvidenceEstimate,
    PosteriorDraws,
    RunTrace,
    log_evidence_mis,
    log_evidence_sis,
    mis_variance_diagnostic,
    posterior_weights,
    resample,
)
from .model import TargetModel
from .sampler import (
    CONTROL,
    LevelCollapse,
    plan_chains,
    rng_stream,
    run_level,
    sample_prior,
    select_seeds,
    soft_truncation,
    thin_seeds,
)
from .schedule import Schedule

log = logging.getLogger(__name__)

# control-stream indices within a level
_PRIOR, _SCREEN, _SCREEN_RETRY, _THIN, _RESAMPLE = range(5)


@dataclass
class SemisConfig:
    n: int = 1000
    p: float = 0.1
    max_levels: int = 100
    seed: int = 0
    jacobian_in_slice: bool = False
    resampler: str = "multinomial"
    workers: int = 1
    r_tol: float = 1e-4
    max_shrink: int = 1000

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.max_levels < 2:
            raise ValueError("max_levels must be at least 2")


@dataclass
class SemisResult:
    trace: RunTrace
    evidence: EvidenceEstimate
    posterior: PosteriorDraws
    levels_used: int
    terminated: bool
    schedule: Schedule = field(repr=False, default=None)

    @property
    def n_cal(self) -> int:
        return self.evidence.n_cal


def n_cal(result) -> int:
    return result.evidence.n_cal


class RunAborted(RuntimeError):
    def __init__(self, message: str, trace: Optional[RunTrace]):
        super().__init__(message)
        self.trace = trace


def run_semis(model: TargetModel, config: Optional[SemisConfig] = None) -> SemisResult:
    """Run the full ladder from prior draws to a terminated (or budget-capped) posterior level."""
    cfg = config or SemisConfig()
    prior = model.prior
    start_count = model.eval_count

    schedule = Schedule(p=cfg.p, max_levels=cfg.max_levels, r_tol=cfg.r_tol)
    blocks = [sample_prior(model, cfg.n, rng_stream(cfg.seed, 0, _PRIOR, CONTROL))]
    schedule.start(len(blocks[0]))

    while not schedule.terminated and len(schedule.levels) < cfg.max_levels:
        prev_level = schedule.last
        level = schedule.advance(blocks[-1].lnL)
        i = level.index
        try:
            seeds = select_seeds(blocks[-1], prev_level, level, rng_stream(cfg.seed, i, _SCREEN, CONTROL))
        except LevelCollapse:
            log.warning("level %d: no seeds survived, retrying with a secondary stream", i)
            try:
                seeds = select_seeds(blocks[-1], prev_level, level,
                                     rng_stream(cfg.seed, i, _SCREEN_RETRY, CONTROL))
            except LevelCollapse as exc:
                schedule.levels.pop()
                trace = RunTrace(list(schedule.levels), blocks, prior, model.eval_count - start_count)
                raise RunAborted(str(exc), trace) from exc
        plan = plan_chains(cfg.n, len(seeds))
        seeds = thin_seeds(seeds, plan.n_chains, rng_stream(cfg.seed, i, _THIN, CONTROL))
        log_soft = soft_truncation(level.ln_threshold, prior, cfg.jacobian_in_slice)
        block = run_level(seeds, plan, log_soft, model, cfg.seed, i, cfg.max_shrink, cfg.workers)
        blocks.append(block)
        schedule.set_sample_count(len(block))
        log.debug("level %d: r=%.6g mean_beta=%.4f chains=%d x %d",
                  i, level.r, level.mean_beta, plan.n_chains, plan.chain_length)

    terminated = schedule.terminated
    trace = RunTrace(list(schedule.levels), blocks, prior, model.eval_count - start_count, terminated)
    ln_sis = log_evidence_sis(trace) if terminated else None
    ln_sigma2, _ = mis_variance_diagnostic(trace)
    evidence = EvidenceEstimate(log_evidence_mis(trace), ln_sis, trace.n_cal, ln_sigma2)
    posterior = posterior_weights(trace)
    rng = rng_stream(cfg.seed, len(schedule.levels), _RESAMPLE, CONTROL)
    posterior.draws = resample(trace, posterior, rng, method=cfg.resampler)
    if not terminated:
        log.warning("ladder hit %d levels without terminating; SIS estimate withheld", cfg.max_levels)
    return SemisResult(trace, evidence, posterior, len(schedule.levels), terminated, schedule)
