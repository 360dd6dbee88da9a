"""Evidence estimators, posterior weights, resampling and diagnostics for a finished run.

For the softly truncated ladder the prior density cancels between the
numerator ``L * prior`` and every mixture term ``N_j q_j``, so the balance
heuristic only needs log-likelihoods and the ladder constants
``(N_j, ln rho_j, ln T_j)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.special import logsumexp

from .model import PriorSpec
from .sampler import Samples
from .schedule import Level, is_terminated


class EstimatorError(ValueError):
    pass


class SISUnavailable(RuntimeError):
    """The ladder did not terminate, so the sequential estimator is undefined."""


@dataclass
class RunTrace:
    levels: List[Level]
    samples: List[Samples]
    prior: PriorSpec
    n_cal: int = 0
    terminated: bool = False

    def __post_init__(self):
        if len(self.levels) != len(self.samples):
            raise EstimatorError("one sample block per level required")

    @property
    def n_total(self) -> int:
        return sum(len(s) for s in self.samples)

    @property
    def lnL(self) -> np.ndarray:
        return np.concatenate([s.lnL for s in self.samples])

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([s.u for s in self.samples])

    @property
    def level_index(self) -> np.ndarray:
        return np.concatenate([np.full(len(s), i) for i, s in enumerate(self.samples)])

    @property
    def ln_lmax_final(self) -> float:
        return float(self.lnL.max())


@dataclass
class EvidenceEstimate:
    ln_z_mis: float
    ln_z_sis: Optional[float]
    n_cal: int
    ln_sigma2: Optional[np.ndarray] = None


@dataclass
class PosteriorDraws:
    log_weights: np.ndarray
    weights: np.ndarray
    ess: float
    draws: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))


def _checked_lnL(trace: RunTrace) -> np.ndarray:
    lnL = trace.lnL
    bad = np.flatnonzero(np.isnan(lnL) | (lnL == np.inf))
    if bad.size:
        raise EstimatorError(f"invalid log-likelihood at sample {int(bad[0])}")
    return lnL


def logmeanexp(x) -> float:
    """``ln mean(exp(x))``; exact when all entries are equal."""
    x = np.asarray(x, dtype=float)
    shift = float(x.max())
    if shift == -math.inf:
        return -math.inf
    return shift + math.log(float(np.mean(np.exp(x - shift))))


def log_mixture_denominator(lnL, levels: List[Level], counts) -> np.ndarray:
    """``ln sum_j (N_j / N_t) min(L/T_j, 1) / rho_j`` per sample (prior factored out).

    Counts stay integers inside the sum so a flat ladder gives exactly zero.
    """
    lnL = np.asarray(lnL, dtype=float)
    counts = np.asarray(counts, dtype=float)
    ln_t = np.array([lv.ln_threshold for lv in levels])
    with np.errstate(invalid="ignore"):
        y = np.minimum(lnL[:, None] - ln_t[None, :], 0.0)
    y[:, ln_t == -np.inf] = 0.0
    y -= np.array([lv.ln_rho_hat for lv in levels])[None, :]
    shift = y.max(axis=1)
    finite = np.isfinite(shift)
    shift = np.where(finite, shift, 0.0)
    total = np.exp(y - shift[:, None]) @ counts
    with np.errstate(divide="ignore"):
        return shift + np.log(total / counts.sum())


def log_balance_weights(lnL, levels: List[Level], counts) -> np.ndarray:
    """``ln alpha_i(theta) = ln(N_i q_i / sum_j N_j q_j)`` per sample and level, shape ``(m, I)``."""
    lnL = np.asarray(lnL, dtype=float)
    ln_t = np.array([lv.ln_threshold for lv in levels])
    with np.errstate(invalid="ignore"):
        y = np.minimum(lnL[:, None] - ln_t[None, :], 0.0)
    y[:, ln_t == -np.inf] = 0.0
    y += np.log(np.asarray(counts, dtype=float))[None, :] - np.array([lv.ln_rho_hat for lv in levels])[None, :]
    return y - logsumexp(y, axis=1, keepdims=True)


def _log_terms(trace: RunTrace) -> np.ndarray:
    """``ln(L / sum_j (N_j/N_t) q_j * prior)``; these are the log posterior weights ``ln w_ik``."""
    lnL = _checked_lnL(trace)
    counts = [len(s) for s in trace.samples]
    return lnL - log_mixture_denominator(lnL, trace.levels, counts)


def log_evidence_mis(trace: RunTrace) -> float:
    """Balance-heuristic estimator pooling every sample of every level."""
    if not trace.levels:
        raise EstimatorError("empty trace")
    return logmeanexp(_log_terms(trace))


def log_evidence_sis(trace: RunTrace) -> float:
    """``ln lmax + sum_i ln mean(beta_i)``; needs a terminated ladder."""
    if len(trace.levels) < 2 or not is_terminated(trace.levels[-1]):
        raise SISUnavailable("sequential estimate needs a terminated ladder with >= 2 levels")
    return trace.ln_lmax_final + sum(math.log(lv.mean_beta) for lv in trace.levels[1:])


def effective_sample_size(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def posterior_weights(trace: RunTrace) -> PosteriorDraws:
    log_w = _log_terms(trace)
    norm = logsumexp(log_w)
    if not np.isfinite(norm):
        raise EstimatorError("all posterior weights are zero")
    weights = np.exp(log_w - norm)
    return PosteriorDraws(log_w, weights, effective_sample_size(log_w))


def resample_indices(weights, m: int, rng: np.random.Generator, method: str = "multinomial") -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    if m < 1:
        raise EstimatorError("need at least one draw")
    if m > weights.size:
        warnings.warn(f"drawing {m} samples from {weights.size} weighted points", stacklevel=2)
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    if method == "multinomial":
        pos = rng.random(m)
    elif method == "systematic":
        pos = (rng.random() + np.arange(m)) / m
    else:
        raise EstimatorError(f"unknown resampling method {method!r}")
    return np.searchsorted(cdf, pos, side="right")


def resample(trace: RunTrace, posterior: PosteriorDraws, rng: np.random.Generator,
             m: Optional[int] = None, method: str = "multinomial") -> np.ndarray:
    """Draw posterior samples in physical space; ``m`` defaults to floor(ESS)."""
    if m is None:
        m = max(1, int(math.floor(posterior.ess)))
    idx = resample_indices(posterior.weights, m, rng, method)
    return trace.prior.to_physical(trace.u[idx])


def mis_variance_diagnostic(trace: RunTrace):
    """Per-level sample variance of ``alpha_i w_i`` under independence.

    Returns ``(ln_sigma2, ln_var)`` with ``ln_var = ln sum_i sigma2_i / N_i``.
    Values are logs because the raw terms scale like the evidence itself.
    MCMC samples are correlated, so this is an optimistic indicator only.
    """
    terms = _log_terms(trace)
    ln_sigma2 = np.empty(len(trace.samples))
    ln_parts = np.empty(len(trace.samples))
    start = 0
    for i, s in enumerate(trace.samples):
        n_i = len(s)
        x = terms[start:start + n_i] + math.log(n_i / trace.n_total)  # ln(alpha_i w_i) per sample
        start += n_i
        shift = x.max()
        a = np.exp(x - shift)
        centered = a - a.mean()
        var = float(np.mean(centered * centered))
        ln_sigma2[i] = 2.0 * shift + math.log(var) if var > 0 else -math.inf
        ln_parts[i] = ln_sigma2[i] - math.log(n_i)
    return ln_sigma2, float(logsumexp(ln_parts))


def ks_statistic(samples, cdf: Callable, weights=None) -> float:
    """Kolmogorov-Smirnov distance between a (weighted) empirical CDF and ``cdf``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EstimatorError("need at least one sample")
    order = np.argsort(x, kind="stable")
    x = x[order]
    if weights is None:
        w = np.full(x.size, 1.0 / x.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()[order]
        w = w / w.sum()
    upper = np.cumsum(w)
    lower = upper - w
    f = np.asarray(cdf(x), dtype=float)
    return float(max(np.max(np.abs(upper - f)), np.max(np.abs(lower - f))))
