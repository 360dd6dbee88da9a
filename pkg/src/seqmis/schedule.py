"""Adaptive ladder of softly truncated proposals.

Level ``i`` targets ``q_i(theta) ~ prior(theta) * min(L(theta) / T_i, 1)`` with the
threshold ``T_i = r_i * lmax_{0:i-1}``.  Everything is kept in log space:
``ln T_i = ln r_i + ln lmax_{0:i-1}``, and level 0 (the prior) has ``ln T_0 = -inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple

import numpy as np

TERMINATION_LN_R = -1e-4


class ContractError(ValueError):
    pass


class BudgetExhausted(RuntimeError):
    """The ladder reached its maximum number of levels before terminating."""


@dataclass(frozen=True)
class Level:
    index: int
    ln_r: float
    ln_lmax_before: float
    ln_threshold: float
    mean_beta: float
    ln_rho_hat: float
    n_samples: int = 0
    at_boundary: bool = False

    @property
    def r(self) -> float:
        return math.exp(self.ln_r)

    def to_dict(self) -> dict:
        return {
            "i": self.index,
            "r": self.r,
            "ln_threshold": self.ln_threshold,
            "mean_beta": self.mean_beta,
            "ln_rho_hat": self.ln_rho_hat,
            "n_samples": self.n_samples,
        }


def log_beta(lnL, ln_thresh_prev: float, ln_thresh_cur: float):
    """Log acceptance probability for moving a level-(i-1) sample to level i.

    ``beta = min(L/T_i, 1) / min(L/T_{i-1}, 1)``, which never exceeds one.
    """
    if ln_thresh_cur < ln_thresh_prev:
        raise ContractError("thresholds must be non-decreasing")
    lnL = np.asarray(lnL, dtype=float)
    cur = np.minimum(lnL - ln_thresh_cur, 0.0)
    if ln_thresh_prev == -math.inf:
        return cur
    return cur - np.minimum(lnL - ln_thresh_prev, 0.0)


def mean_beta(lnL, ln_thresh_prev: float, ln_thresh_cur: float) -> float:
    return float(np.mean(np.exp(log_beta(lnL, ln_thresh_prev, ln_thresh_cur))))


class Solution(NamedTuple):
    ln_r: float
    mean_beta: float
    at_boundary: bool


def solve_next_r(lnL_batch, prev: Level, ln_lmax_new: float, p: float,
                 tol: float = 1e-4, max_iter: int = 200) -> Solution:
    """Pick ``r_i`` so that the mean acceptance over the batch matches ``p``.

    Mean beta is non-increasing in the threshold, so the root is bracketed by
    the previous threshold (mean beta = 1) and ``r = 1``.  The search runs on
    ``ln T`` by bisection.  When even ``r = 1`` keeps the mean above ``p`` the
    result is clamped to ``r = 1`` and flagged.
    """
    lnL = np.asarray(lnL_batch, dtype=float)
    if lnL.size == 0:
        raise ContractError("empty likelihood batch")
    if not 0.0 < p < 1.0:
        raise ContractError(f"p must be in (0, 1), got {p}")
    prev_t = prev.ln_threshold
    hi = ln_lmax_new
    beta_hi = mean_beta(lnL, prev_t, hi)
    if beta_hi >= p or hi <= prev_t:
        return Solution(0.0, beta_hi, True)

    lo = prev_t if prev_t > -math.inf else float(lnL.min())
    best_x, best_beta = hi, beta_hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        m = mean_beta(lnL, prev_t, mid)
        if abs(m - p) < abs(best_beta - p):
            best_x, best_beta = mid, m
        if abs(m - p) <= tol:
            break
        if m > p:
            lo = mid
        else:
            hi = mid
    return Solution(best_x - ln_lmax_new, best_beta, False)


def is_terminated(level: Level) -> bool:
    return level.ln_r >= TERMINATION_LN_R


@dataclass
class Schedule:
    """Ordered list of levels plus the ladder configuration."""

    p: float = 0.1
    max_levels: int = 100
    r_tol: float = 1e-4
    levels: List[Level] = field(default_factory=list)

    def start(self, n_samples: int) -> Level:
        if self.levels:
            raise ContractError("schedule already started")
        level = Level(0, -math.inf, -math.inf, -math.inf, 1.0, 0.0, n_samples)
        self.levels.append(level)
        return level

    @property
    def last(self) -> Level:
        return self.levels[-1]

    @property
    def terminated(self) -> bool:
        return bool(self.levels) and is_terminated(self.last)

    def advance(self, lnL_batch) -> Level:
        """Append the next level, solved on the last level's likelihoods."""
        if not self.levels:
            raise ContractError("schedule not started")
        if self.terminated:
            raise ContractError("schedule already terminated")
        if len(self.levels) >= self.max_levels:
            raise BudgetExhausted(f"maximum of {self.max_levels} levels reached")
        prev = self.last
        lnL = np.asarray(lnL_batch, dtype=float)
        if lnL.size == 0:
            raise ContractError("empty likelihood batch")
        ln_lmax = max(prev.ln_lmax_before, float(lnL.max()))
        sol = solve_next_r(lnL, prev, ln_lmax, self.p, self.r_tol)
        level = Level(
            index=prev.index + 1,
            ln_r=sol.ln_r,
            ln_lmax_before=ln_lmax,
            ln_threshold=sol.ln_r + ln_lmax,
            mean_beta=sol.mean_beta,
            ln_rho_hat=prev.ln_rho_hat + math.log(sol.mean_beta),
            at_boundary=sol.at_boundary,
        )
        self.levels.append(level)
        return level

    def set_sample_count(self, n: int) -> None:
        self.levels[-1] = replace(self.levels[-1], n_samples=int(n))

    def to_list(self) -> list:
        return [lv.to_dict() for lv in self.levels]
