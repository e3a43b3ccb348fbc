"""Weighted unadjusted Langevin kernel.

Each particle moves by one ULA step and its log-weight picks up the
difference between the forward and backward transition exponents, so that
``e^A`` corrects both the discretisation bias and the drift of the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from jarzmle.core import LatentModel, ParticleCloud, ParticleDivergenceError, WeightDegeneracyError


@dataclass(frozen=True)
class KernelStepRecord:
    new_position: np.ndarray
    new_log_weight: float
    alpha_forward: float
    alpha_backward: float


def alpha_from_parts(u: np.ndarray, grad: np.ndarray, x_l: np.ndarray, x_r: np.ndarray, h: float) -> np.ndarray:
    """``u + (x_r - x_l).grad / 2 + h |grad|^2 / 4`` with ``u, grad`` taken at ``x_l``."""
    return u + 0.5 * np.sum((x_r - x_l) * grad, axis=-1) + 0.25 * h * np.sum(grad * grad, axis=-1)


def alpha(model: LatentModel, theta, x_l, x_r, h: float) -> float:
    if not h > 0:
        raise ValueError("h must be positive")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x_l = np.atleast_1d(np.asarray(x_l, dtype=float))
    x_r = np.atleast_1d(np.asarray(x_r, dtype=float))
    u, g = model.potential_and_grad_x(theta, x_l)
    val = float(alpha_from_parts(u, g, x_l, x_r, h))
    if not np.isfinite(val):
        raise ValueError("non-finite potential or gradient in alpha")
    return val


def ula_step(x, grad, h: float, noise) -> np.ndarray:
    return np.asarray(x, dtype=float) - h * np.asarray(grad, dtype=float) + np.sqrt(2.0 * h) * np.asarray(noise, dtype=float)


def sweep(
    model: LatentModel,
    theta_k: np.ndarray,
    theta_next: np.ndarray,
    positions: np.ndarray,
    log_weights: np.ndarray,
    h: float,
    noise: np.ndarray,
    u_k: np.ndarray | None = None,
    grad_k: np.ndarray | None = None,
):
    """Advance every particle by one weighted ULA step.

    Drift and forward exponent use ``theta_k``; the backward exponent uses
    ``theta_next``. ``u_k``/``grad_k`` may carry ``U(theta_k, X)`` and its
    x-gradient from the previous call. Returns ``(positions, log_weights,
    u_next, grad_next)`` where the last two are evaluated at ``theta_next`` and
    can be fed back in on the following step.
    """
    if u_k is None or grad_k is None:
        u_k, grad_k = model.potential_and_grad_x(theta_k, positions)
    new_pos = ula_step(positions, grad_k, h, noise)
    if not np.all(np.isfinite(new_pos)):
        raise ParticleDivergenceError()
    u_next, grad_next = model.potential_and_grad_x(theta_next, new_pos)
    fwd = alpha_from_parts(u_k, grad_k, positions, new_pos, h)
    bwd = alpha_from_parts(u_next, grad_next, new_pos, positions, h)
    new_lw = log_weights - bwd + fwd
    if not (np.all(np.isfinite(new_lw)) and np.all(np.isfinite(grad_next))):
        raise ParticleDivergenceError()
    return new_pos, new_lw, u_next, grad_next


def kernel_step(
    model: LatentModel,
    theta_k,
    x,
    log_weight: float,
    h: float,
    rng: np.random.Generator | None = None,
    theta_next=None,
    noise=None,
) -> KernelStepRecord:
    """Single-particle step; ``theta_next`` defaults to ``theta_k`` (static target)."""
    theta_k = np.atleast_1d(np.asarray(theta_k, dtype=float))
    theta_next = theta_k if theta_next is None else np.atleast_1d(np.asarray(theta_next, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if noise is None:
        noise = rng.standard_normal(x.shape)
    u_k, g_k = model.potential_and_grad_x(theta_k, x)
    new_x = ula_step(x, g_k, h, noise)
    if not np.all(np.isfinite(new_x)):
        raise ParticleDivergenceError()
    u_n, g_n = model.potential_and_grad_x(theta_next, new_x)
    fwd = float(alpha_from_parts(u_k, g_k, x, new_x, h))
    bwd = float(alpha_from_parts(u_n, g_n, new_x, x, h))
    new_a = log_weight - bwd + fwd
    if not np.isfinite(new_a):
        raise ParticleDivergenceError()
    return KernelStepRecord(new_x, new_a, fwd, bwd)


def log_mean_exp(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    m = np.max(a)
    if not np.isfinite(m):
        raise WeightDegeneracyError()
    return float(m + np.log(np.mean(np.exp(a - m))))


def normalized_weights(log_weights) -> np.ndarray:
    a = np.asarray(log_weights, dtype=float)
    if a.size == 0:
        raise ValueError("empty weight vector")
    m = np.max(a)
    if not np.isfinite(m) or np.any(np.isnan(a)):
        raise WeightDegeneracyError()
    w = np.exp(a - m)
    return w / w.sum()


def ess(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.dot(w, w))


def systematic_resample(w, u: float) -> np.ndarray:
    """Ancestor indices from one shared offset ``u`` in ``[0, 1)``.

    Grid point ``j`` sits at ``(u + j) / N`` and picks the first index whose
    cumulative weight strictly exceeds it.
    """
    w = np.asarray(w, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights are not normalized")
    if not 0.0 <= u < 1.0:
        raise ValueError("u must lie in [0, 1)")
    n = w.size
    grid = (u + np.arange(n)) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0
    # (u + n - 1) / n can round up to exactly 1.0 when u is just below 1
    return np.minimum(np.searchsorted(cum, grid, side="right"), np.flatnonzero(w)[-1])


def resample_with_indices(cloud: ParticleCloud, u: float) -> tuple[ParticleCloud, np.ndarray]:
    segment = log_mean_exp(cloud.log_weights)
    idx = systematic_resample(normalized_weights(cloud.log_weights), u)
    new = ParticleCloud(
        cloud.positions[idx],
        np.zeros(cloud.particle_count),
        cloud.evidence_segments + (segment,),
    )
    return new, idx


def resample_cloud(cloud: ParticleCloud, rng: np.random.Generator) -> ParticleCloud:
    return resample_with_indices(cloud, float(rng.uniform()))[0]


def cloud_log_evidence(cloud: ParticleCloud, log_z0: float = 0.0) -> float:
    """``log Z0 + sum(segments) + log mean exp(A)``."""
    return float(log_z0 + sum(cloud.evidence_segments) + log_mean_exp(cloud.log_weights))
