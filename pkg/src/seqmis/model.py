"""Priors, the standard-normal transform, target models and benchmark likelihoods."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

LN_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class InvalidInput(ValueError):
    """Raised for malformed parameter vectors or prior definitions."""


@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.upper > self.lower:
            raise InvalidInput(f"uniform prior needs upper > lower, got ({self.lower}, {self.upper})")


@dataclass(frozen=True)
class Normal:
    mean: float
    stddev: float

    def __post_init__(self):
        if not self.stddev > 0:
            raise InvalidInput(f"normal prior needs stddev > 0, got {self.stddev}")


Marginal = Union[Uniform, Normal]


def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_ppf(p):
    return special.ndtri(p)


def std_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - LN_SQRT_2PI


class PriorSpec:
    """Independent per-coordinate prior with its probability transform.

    ``to_physical`` maps standard-normal coordinates ``u`` to ``theta`` with
    ``theta_j = F_j^{-1}(Phi(u_j))``; ``to_standard`` is its inverse.  Upper
    tails of uniform coordinates are computed from the complementary
    probability so both tails keep full relative precision.
    """

    def __init__(self, coords: Sequence[Marginal]):
        coords = list(coords)
        if not coords:
            raise InvalidInput("prior needs at least one coordinate")
        for c in coords:
            if not isinstance(c, (Uniform, Normal)):
                raise InvalidInput(f"unsupported marginal {c!r}")
        self.coords = coords
        self.is_uniform = np.array([isinstance(c, Uniform) for c in coords])
        # (lower, width) for uniform coordinates, (mean, stddev) for normal ones
        self._loc = np.array([c.lower if isinstance(c, Uniform) else c.mean for c in coords], float)
        self._scale = np.array(
            [c.upper - c.lower if isinstance(c, Uniform) else c.stddev for c in coords], float
        )
        self._upper = np.where(self.is_uniform, self._loc + self._scale, np.inf)
        self._inner_lo = np.where(self.is_uniform, np.nextafter(self._loc, np.inf), -np.inf)
        self._inner_hi = np.where(self.is_uniform, np.nextafter(self._upper, -np.inf), np.inf)

    @classmethod
    def iid(cls, marginal: Marginal, dim: int) -> "PriorSpec":
        return cls([marginal] * dim)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InvalidInput(f"expected trailing dimension {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInput("non-finite coordinate")
        return x

    def to_physical(self, u) -> np.ndarray:
        u = self._check(u)
        lower_tail = self._loc + self._scale * std_normal_cdf(np.minimum(u, 0.0))
        upper_tail = self._upper - self._scale * std_normal_cdf(-np.maximum(u, 0.0))
        unif = np.where(u <= 0.0, lower_tail, upper_tail)
        unif = np.clip(unif, self._inner_lo, self._inner_hi)
        return np.where(self.is_uniform, unif, self._loc + self._scale * u)

    def to_standard(self, theta) -> np.ndarray:
        theta = self._check(theta)
        with np.errstate(invalid="ignore", divide="ignore"):
            p_lo = (theta - self._loc) / self._scale
            p_hi = (self._upper - theta) / self._scale
            unif = np.where(p_lo <= 0.5, std_normal_ppf(p_lo), -std_normal_ppf(p_hi))
        return np.where(self.is_uniform, unif, (theta - self._loc) / self._scale)

    def log_jacobian(self, u) -> np.ndarray:
        """Sum over coordinates of ln(dT_j/du_j) = ln phi(u_j) - ln pi_j(T_j(u_j))."""
        u = self._check(u)
        # uniform: pi = 1/width; normal: dT/du = stddev
        per = np.where(self.is_uniform, std_normal_logpdf(u) + np.log(self._scale), np.log(self._scale))
        return per.sum(axis=-1)

    def logpdf(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self._loc) & (theta <= self._upper)
        with np.errstate(divide="ignore"):
            unif = np.where(inside, -np.log(self._scale), -np.inf)
        norm = std_normal_logpdf((theta - self._loc) / self._scale) - np.log(self._scale)
        return np.where(self.is_uniform, unif, norm).sum(axis=-1)


class TargetModel:
    """A prior plus a vectorised log-likelihood with a thread-safe call counter.

    ``log_likelihood`` receives an ``(m, n)`` array and returns ``m`` values.
    Every row passed through :meth:`loglik` counts as one evaluation.
    """

    def __init__(self, prior: PriorSpec, log_likelihood: Callable[[np.ndarray], np.ndarray], name: str = "model"):
        self.prior = prior
        self.log_likelihood = log_likelihood
        self.name = name
        self._count = 0
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def eval_count(self) -> int:
        return self._count

    def reset_count(self) -> None:
        with self._lock:
            self._count = 0

    def loglik(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[1] != self.dim:
            raise InvalidInput(f"expected {self.dim} columns, got {theta.shape[1]}")
        out = np.asarray(self.log_likelihood(theta), dtype=float).reshape(theta.shape[0])
        with self._lock:
            self._count += theta.shape[0]
        return out

    def loglik_u(self, u) -> np.ndarray:
        return self.loglik(self.prior.to_physical(u))


# ---------------------------------------------------------------- benchmarks

SHELL_RADIUS = 2.0
SHELL_WIDTH = 0.1
SHELL_OFFSET = 3.5


def loglik_eggbox(theta) -> np.ndarray:
    theta = np.atleast_2d(theta)
    return (2.0 + np.cos(theta[:, 0] / 2.0) * np.cos(theta[:, 1] / 2.0)) ** 5


def _log_circ(theta, center_x):
    shifted = theta.copy()
    shifted[:, 0] -= center_x
    dist = np.sqrt(np.sum(shifted * shifted, axis=1))
    w2 = SHELL_WIDTH * SHELL_WIDTH
    return -0.5 * math.log(2.0 * math.pi * w2) - (dist - SHELL_RADIUS) ** 2 / (2.0 * w2)


def loglik_shells(theta) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    return np.logaddexp(_log_circ(theta, -SHELL_OFFSET), _log_circ(theta, SHELL_OFFSET))


def log_loggamma(x, mu):
    z = np.asarray(x, dtype=float) - mu
    return z - np.exp(z)


def log_normal(x, mu, sigma=1.0):
    return std_normal_logpdf((np.asarray(x, dtype=float) - mu) / sigma) - math.log(sigma)


def nlg_last_loggamma_index(n: int) -> int:
    """0-based index of the last LogGamma coordinate (coords 2..this are LogGamma)."""
    return (n + 2) // 2 - 1


def nlg_coordinate_loglik(theta, n: int) -> np.ndarray:
    """Per-coordinate log-likelihood contributions, shape ``(m, n)``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    out = np.empty_like(theta)
    half = math.log(0.5)
    out[:, 0] = np.logaddexp(half + log_loggamma(theta[:, 0], -10.0), half + log_loggamma(theta[:, 0], 10.0))
    out[:, 1] = np.logaddexp(half + log_normal(theta[:, 1], -10.0), half + log_normal(theta[:, 1], 10.0))
    last_lg = nlg_last_loggamma_index(n)
    for j in range(2, n):
        if j <= last_lg:
            out[:, j] = log_loggamma(theta[:, j], 10.0)
        else:
            out[:, j] = log_normal(theta[:, j], 10.0)
    return out


def loglik_nlg(theta) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    return nlg_coordinate_loglik(theta, theta.shape[1]).sum(axis=1)


NLG_BOUND = 30.0


def _loggamma_cdf(x, mu):
    return -np.expm1(-np.exp(np.asarray(x, dtype=float) - mu))


def _nlg_raw_cdf(index: int, x, n: int):
    if index == 0:
        return 0.5 * _loggamma_cdf(x, -10.0) + 0.5 * _loggamma_cdf(x, 10.0)
    if index == 1:
        return 0.5 * std_normal_cdf(np.asarray(x) + 10.0) + 0.5 * std_normal_cdf(np.asarray(x) - 10.0)
    if index <= nlg_last_loggamma_index(n):
        return _loggamma_cdf(x, 10.0)
    return std_normal_cdf(np.asarray(x) - 10.0)


def nlg_marginal_cdf(index: int, x, n: int):
    """Exact posterior marginal CDF of coordinate ``index`` (0-based), truncated to [-30, 30]."""
    if not 0 <= index < n:
        raise InvalidInput(f"coordinate index {index} out of range for dimension {n}")
    x = np.clip(np.asarray(x, dtype=float), -NLG_BOUND, NLG_BOUND)
    lo = _nlg_raw_cdf(index, -NLG_BOUND, n)
    hi = _nlg_raw_cdf(index, NLG_BOUND, n)
    return (_nlg_raw_cdf(index, x, n) - lo) / (hi - lo)


_REFERENCE = {
    ("eggbox", 2): 235.86,
    ("shells", 2): -1.75,
    ("shells", 10): -14.59,
    ("shells", 30): -60.13,
    ("nlg", 2): -8.19,
    ("nlg", 5): -20.47,
    ("nlg", 10): -40.94,
    ("nlg", 20): -81.89,
}

BENCHMARKS = ("eggbox", "shells", "nlg")


@dataclass(frozen=True)
class BenchmarkCase:
    id: str
    dim: int
    reference_log_evidence: Optional[float] = field(default=None)


def reference_log_evidence(case: str, dim: int) -> Optional[float]:
    return _REFERENCE.get((case.lower(), int(dim)))


def benchmark_case(case: str, dim: int) -> BenchmarkCase:
    return BenchmarkCase(case.lower(), int(dim), reference_log_evidence(case, dim))


def benchmark(case: str, dim: int) -> TargetModel:
    """Build one of the three analytic benchmark models."""
    case = case.lower()
    if case == "eggbox":
        if dim != 2:
            raise InvalidInput("eggbox is two-dimensional")
        prior = PriorSpec.iid(Uniform(0.0, 10.0 * math.pi), 2)
        return TargetModel(prior, loglik_eggbox, name="eggbox")
    if case == "shells":
        if dim < 2:
            raise InvalidInput("gaussian shells need dim >= 2")
        return TargetModel(PriorSpec.iid(Uniform(-6.0, 6.0), dim), loglik_shells, name="shells")
    if case == "nlg":
        if dim < 2:
            raise InvalidInput("normal-loggamma mixture needs dim >= 2")
        return TargetModel(PriorSpec.iid(Uniform(-NLG_BOUND, NLG_BOUND), dim), loglik_nlg, name="nlg")
    raise InvalidInput(f"unknown benchmark {case!r}; choose from {', '.join(BENCHMARKS)}")
