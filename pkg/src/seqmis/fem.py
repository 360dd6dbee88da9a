"""Shear-building model updating from modal data.

A chain of ``n`` floors: story ``i`` links floor ``i-1`` (ground for i=1) to
floor ``i``.  Parameters are multipliers on nominal story stiffnesses and
floor masses, ``theta = [stiffness multipliers..., mass multipliers...]``.
Modal parameters come from a cyclic Jacobi eigensolver applied batch-wise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import PriorSpec, TargetModel, Uniform

STIFFNESS_PRIOR = Uniform(0.0, 1.5)
MASS_PRIOR = Uniform(0.9, 1.1)

# 4-story demo building: story stiffness [N/m], floor mass [kg]
DEMO_STIFFNESS = (1.2e7, 1.0e7, 0.9e7, 0.8e7)
DEMO_MASS = (3400.0, 2600.0, 2600.0, 1800.0)

FREQ_COV = 0.005
SHAPE_STD = 0.01
DAMAGE = 0.4


class EigenFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ShearBuilding:
    stiffness: tuple
    mass: tuple

    def __post_init__(self):
        if len(self.stiffness) != len(self.mass) or not self.stiffness:
            raise ValueError("need one stiffness and one mass per story")
        if min(self.stiffness) <= 0 or min(self.mass) <= 0:
            raise ValueError("nominal stiffness and mass must be positive")

    @property
    def n_stories(self) -> int:
        return len(self.stiffness)

    @property
    def n_params(self) -> int:
        return 2 * self.n_stories

    def prior(self) -> PriorSpec:
        n = self.n_stories
        return PriorSpec([STIFFNESS_PRIOR] * n + [MASS_PRIOR] * n)


def assemble_batch(building: ShearBuilding, theta):
    """Stiffness matrices ``(b, n, n)`` and diagonal masses ``(b, n)``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    n = building.n_stories
    if theta.shape[1] != 2 * n:
        raise ValueError(f"expected {2 * n} parameters, got {theta.shape[1]}")
    k = theta[:, :n] * np.asarray(building.stiffness)
    m = theta[:, n:] * np.asarray(building.mass)
    b = theta.shape[0]
    K = np.zeros((b, n, n))
    idx = np.arange(n)
    K[:, idx, idx] = k
    K[:, idx[:-1], idx[:-1]] += k[:, 1:]
    K[:, idx[:-1], idx[1:]] = -k[:, 1:]
    K[:, idx[1:], idx[:-1]] = -k[:, 1:]
    return K, m


def assemble(building: ShearBuilding, theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("multipliers must be positive")
    K, m = assemble_batch(building, theta.reshape(1, -1))
    return K[0], np.diag(m[0])


def _jacobi_sweep(A, V):
    """One cyclic sweep of Jacobi rotations, in place on ``A`` and ``V``."""
    n = A.shape[1]
    for p in range(n - 1):
        for q in range(p + 1, n):
            apq = A[:, p, q]
            nz = apq != 0.0
            if not nz.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                tau = (A[:, q, q] - A[:, p, p]) / (2.0 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(nz & np.isfinite(t), t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cc, ss = c[:, None], s[:, None]
            ap, aq = A[:, :, p].copy(), A[:, :, q].copy()
            A[:, :, p] = cc * ap - ss * aq
            A[:, :, q] = ss * ap + cc * aq
            ap, aq = A[:, p, :].copy(), A[:, q, :].copy()
            A[:, p, :] = cc * ap - ss * aq
            A[:, q, :] = ss * ap + cc * aq
            A[:, p, q] = 0.0
            A[:, q, p] = 0.0
            vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
            V[:, :, p] = cc * vp - ss * vq
            V[:, :, q] = ss * vp + cc * vq


def jacobi_eigh(A, tol: float = 1e-12, max_sweeps: int = 60):
    """Cyclic Jacobi eigen-decomposition of a batch of symmetric matrices.

    Sweeps until the off-diagonal Frobenius norm is at most ``tol`` times the
    matrix norm.  Returns ascending eigenvalues ``(b, n)``, eigenvector
    columns ``(b, n, n)`` and a per-matrix convergence flag.
    """
    A = np.array(A, dtype=float, copy=True)
    squeeze = A.ndim == 2
    if squeeze:
        A = A[None]
    b, n, _ = A.shape
    V = np.broadcast_to(np.eye(n), (b, n, n)).copy()
    scale = np.sqrt(np.sum(A * A, axis=(1, 2)))
    off_mask = ~np.eye(n, dtype=bool)

    def off_norm(X):
        return np.sqrt(np.sum((X * X)[:, off_mask], axis=1))

    # converged matrices are frozen so a result never depends on its batch-mates
    converged = off_norm(A) <= tol * scale
    for _ in range(max_sweeps):
        active = np.flatnonzero(~converged)
        if active.size == 0:
            break
        Aa, Va = A[active], V[active]
        _jacobi_sweep(Aa, Va)
        A[active], V[active] = Aa, Va
        converged[active] = off_norm(Aa) <= tol * scale[active]
    w = np.diagonal(A, axis1=1, axis2=2).copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    if squeeze:
        return w[0], V[0], bool(converged[0])
    return w, V, converged


def eigensolve_batch(K, m):
    """Generalized problem ``K phi = omega^2 diag(m) phi`` for a batch.

    Returns frequencies in Hz ``(b, n)``, mass-normalised modes ``(b, n, n)``
    (columns) and the convergence flags.
    """
    inv_sqrt = 1.0 / np.sqrt(m)
    A = K * inv_sqrt[:, :, None] * inv_sqrt[:, None, :]
    w, V, ok = jacobi_eigh(A)
    freqs = np.sqrt(np.maximum(w, 0.0)) / (2.0 * math.pi)
    return freqs, V * inv_sqrt[:, :, None], ok


def eigensolve(K, M):
    K = np.asarray(K, dtype=float)
    m = np.diag(np.asarray(M, dtype=float))
    freqs, modes, ok = eigensolve_batch(K[None], m[None])
    if not ok[0]:
        raise EigenFailure("Jacobi iteration did not converge")
    return freqs[0], modes[0]


def mac(phi_a, phi_b) -> float:
    a = np.asarray(phi_a, dtype=float)
    b = np.asarray(phi_b, dtype=float)
    na, nb = a @ a, b @ b
    if na == 0 or nb == 0:
        raise ValueError("MAC of a zero vector")
    return float((a @ b) ** 2 / (na * nb))


def normalize_shapes(shapes):
    """Unit norm per row, largest-magnitude entry made positive."""
    shapes = np.atleast_2d(np.asarray(shapes, dtype=float))
    shapes = shapes / np.linalg.norm(shapes, axis=-1, keepdims=True)
    peak = np.take_along_axis(shapes, np.argmax(np.abs(shapes), axis=-1)[..., None], axis=-1)
    return shapes * np.where(peak < 0, -1.0, 1.0)


@dataclass
class ModalData:
    freqs: np.ndarray  # (M,)
    shapes: np.ndarray  # (M, n), unit norm
    freq_var: np.ndarray  # (M,)
    shape_var: np.ndarray  # (M, n)

    @property
    def n_modes(self) -> int:
        return len(self.freqs)

    @property
    def omega(self) -> np.ndarray:
        """Stacked ``[f_1, phi_1, ..., f_M, phi_M]``."""
        return np.column_stack([self.freqs, self.shapes]).ravel()

    @property
    def cov_diag(self) -> np.ndarray:
        return np.column_stack([self.freq_var, self.shape_var]).ravel()


def _match(data_shapes, comp_shapes):
    """Greedy max-MAC pairing; returns computed-mode index per data mode ``(b, M)``."""
    b, n_comp, _ = comp_shapes.shape
    n_data = data_shapes.shape[0]
    macs = np.einsum("dj,bcj->bdc", data_shapes, comp_shapes) ** 2
    pick = np.empty((b, n_data), dtype=int)
    rows = np.arange(b)
    for _ in range(n_data):
        flat = np.argmax(macs.reshape(b, -1), axis=1)
        d, c = np.divmod(flat, n_comp)
        pick[rows, d] = c
        macs[rows, d, :] = -1.0
        macs[rows, :, c] = -1.0
    return pick


def modal_loglik_batch(theta, building: ShearBuilding, data: ModalData) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    out = np.full(theta.shape[0], -np.inf)
    valid = np.all(theta > 0, axis=1) & np.all(np.isfinite(theta), axis=1)
    if not valid.any():
        return out
    K, m = assemble_batch(building, theta[valid])
    freqs, modes, ok = eigensolve_batch(K, m)
    shapes = np.swapaxes(modes, 1, 2)
    shapes = shapes / np.linalg.norm(shapes, axis=2, keepdims=True)
    pick = _match(data.shapes, shapes)
    f_c = np.take_along_axis(freqs, pick, axis=1)
    s_c = np.take_along_axis(shapes, pick[:, :, None], axis=1)
    sign = np.where(np.einsum("dj,bdj->bd", data.shapes, s_c) < 0, -1.0, 1.0)
    s_c = s_c * sign[:, :, None]
    r_f = (data.freqs - f_c) ** 2 / data.freq_var
    r_s = (data.shapes - s_c) ** 2 / data.shape_var
    ll = -0.5 * (r_f.sum(axis=1) + r_s.sum(axis=(1, 2)))
    out[np.flatnonzero(valid)] = np.where(ok, ll, -np.inf)
    return out


def modal_loglik(theta, building: ShearBuilding, data: ModalData) -> float:
    return float(modal_loglik_batch(np.asarray(theta, float).reshape(1, -1), building, data)[0])


def demo_building() -> ShearBuilding:
    return ShearBuilding(DEMO_STIFFNESS, DEMO_MASS)


def damage_theta(pattern: int, n_stories: int = 4) -> np.ndarray:
    """Pattern 0 intact, 1 first story damaged, 2 first and third stories damaged."""
    theta = np.ones(2 * n_stories)
    if pattern == 1:
        theta[0] = 1.0 - DAMAGE
    elif pattern == 2:
        theta[[0, 2]] = 1.0 - DAMAGE
    elif pattern != 0:
        raise ValueError(f"unknown damage pattern {pattern}")
    return theta


def make_case(pattern: int, noise_cov_scale: float = 1.0, rng: Optional[np.random.Generator] = None,
              building: Optional[ShearBuilding] = None, n_modes: Optional[int] = None):
    """Synthetic modal data for a damage pattern.

    The likelihood covariance is fixed (0.5 % frequency c.o.v., 0.01 on shape
    entries); the injected noise is drawn from that covariance times
    ``noise_cov_scale`` (0 gives exact data).
    """
    building = building or demo_building()
    n = building.n_stories
    theta = damage_theta(pattern, n)
    K, M = assemble(building, theta)
    freqs, modes = eigensolve(K, M)
    n_modes = n_modes or n
    freqs = freqs[:n_modes]
    shapes = normalize_shapes(modes.T[:n_modes])
    freq_var = (FREQ_COV * freqs) ** 2
    shape_var = np.full(shapes.shape, SHAPE_STD ** 2)
    if noise_cov_scale > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        sd = math.sqrt(noise_cov_scale)
        freqs = freqs + sd * np.sqrt(freq_var) * rng.standard_normal(freqs.shape)
        shapes = normalize_shapes(shapes + sd * SHAPE_STD * rng.standard_normal(shapes.shape))
    return building, ModalData(freqs, shapes, freq_var, shape_var), theta


def fem_model(building: ShearBuilding, data: ModalData, name: str = "fem") -> TargetModel:
    return TargetModel(building.prior(), lambda th: modal_loglik_batch(th, building, data), name=name)


def posterior_summary(theta_samples, weights=None):
    """Weighted mean and standard deviation per parameter."""
    x = np.asarray(theta_samples, dtype=float)
    w = np.full(x.shape[0], 1.0 / x.shape[0]) if weights is None else np.asarray(weights) / np.sum(weights)
    mean = w @ x
    std = np.sqrt(w @ (x - mean) ** 2)
    return mean, std


def damage_report(ref_mean, ref_std, dmg_mean, dmg_std) -> list:
    """Per-story rows of stiffness posterior stats and relative change against the reference."""
    rows = []
    for i in range(len(ref_mean)):
        rows.append({
            "story": i + 1,
            "ref_mean": float(ref_mean[i]),
            "ref_std": float(ref_std[i]),
            "mean": float(dmg_mean[i]),
            "std": float(dmg_std[i]),
            "stiffness_change": float(dmg_mean[i] / ref_mean[i] - 1.0),
        })
    return rows
