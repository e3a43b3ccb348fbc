"""Comparator algorithms with equally weighted particles.

PGD and IPLA discretise a joint gradient flow in ``(theta, X)`` with a single
step; SFLA runs one latent chain on a faster time-scale; SOUL alternates an
inner Langevin chain at frozen ``theta`` with a gradient step on ``theta``.
None of them estimate the evidence, so their trajectories carry NaN there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from jarzmle.core import (
    STREAM_INIT,
    STREAM_SWEEP,
    STREAM_THETA,
    LatentModel,
    ParticleDivergenceError,
    Trajectory,
    as_theta,
    substream,
)
from jarzmle.engine import FitResult

KINDS = ("pgd", "ipla", "sfla", "soul")


@dataclass(frozen=True)
class BaselineConfig:
    """``gamma`` is the shared PGD/IPLA step, the SFLA step and the SOUL inner
    Langevin step. ``n_particles`` doubles as SOUL's inner chain length."""

    kind: str
    gamma: float
    n_particles: int = 100
    n_iterations: int = 500
    soul_theta_gamma: float = 0.1
    sfla_beta: float = 1e3
    sfla_epsilon: float = 0.1
    seed: int = 0
    theta_init: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}")
        if not self.gamma > 0 or not self.soul_theta_gamma > 0:
            raise ValueError("step-sizes must be positive")
        if not (self.sfla_beta > 0 and self.sfla_epsilon > 0):
            raise ValueError("SFLA beta and epsilon must be positive")
        if self.n_particles < 1 or self.n_iterations < 0:
            raise ValueError("need n_particles >= 1 and n_iterations >= 0")
        object.__setattr__(self, "theta_init", tuple(float(t) for t in np.atleast_1d(self.theta_init)))


def _finite(*arrays):
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ParticleDivergenceError()


def _mean_grad_theta(model, theta, X):
    return np.asarray(model.grad_theta(theta, X), dtype=float).reshape(X.shape[0], -1).mean(axis=0)


def pgd_step(theta, particles, model: LatentModel, gamma: float, rng=None, noise=None):
    theta = as_theta(theta)
    X = np.asarray(particles, dtype=float)
    if noise is None:
        noise = rng.standard_normal(X.shape)
    g = _mean_grad_theta(model, theta, X)
    new_theta = model.project_theta(theta - gamma * g)
    new_X = X - gamma * model.grad_x(theta, X) + np.sqrt(2 * gamma) * noise
    _finite(new_theta, new_X)
    return new_theta, new_X


def ipla_step(theta, particles, model: LatentModel, gamma: float, rng=None, noise=None, theta_noise=None):
    """PGD plus ``sqrt(2 gamma / N)`` Gaussian noise on the parameter."""
    X = np.asarray(particles, dtype=float)
    if noise is None:
        noise = rng.standard_normal(X.shape)
    if theta_noise is None:
        theta_noise = rng.standard_normal(np.size(theta))
    new_theta, new_X = pgd_step(theta, X, model, gamma, noise=noise)
    new_theta = model.project_theta(new_theta + np.sqrt(2 * gamma / X.shape[0]) * np.asarray(theta_noise))
    _finite(new_theta)
    return new_theta, new_X


def sfla_step(theta, x, model: LatentModel, gamma: float, beta: float, epsilon: float, rng=None, noise=None, theta_noise=None):
    theta = as_theta(theta)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if noise is None:
        noise = rng.standard_normal(x.shape)
    if theta_noise is None:
        theta_noise = rng.standard_normal(theta.shape)
    g = _mean_grad_theta(model, theta, x)
    new_theta = model.project_theta(theta - gamma * g + np.sqrt(2 * gamma / beta) * np.asarray(theta_noise))
    step = gamma / epsilon
    new_x = x - step * model.grad_x(theta, x) + np.sqrt(2 * step) * noise
    _finite(new_theta, new_x)
    return new_theta, new_x


def soul_step(theta, x_chain_state, model: LatentModel, gamma_theta: float, gamma_x: float, n_inner: int, rng=None, noise=None):
    """Run ``n_inner`` Langevin steps at fixed ``theta`` from the chain's last
    state, average ``grad_theta U`` over the visited states, then step ``theta``.

    Returns ``(theta', inner_states, gradient_estimate)``; the last row of
    ``inner_states`` warm-starts the next call.
    """
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    theta = as_theta(theta)
    x = np.atleast_2d(np.asarray(x_chain_state, dtype=float))[-1]
    if noise is None:
        noise = rng.standard_normal((n_inner, x.size))
    scale = np.sqrt(2 * gamma_x)
    states = np.empty((n_inner, x.size))
    for j in range(n_inner):
        x = x - gamma_x * model.grad_x(theta, x) + scale * noise[j]
        states[j] = x
    _finite(states)
    g = _mean_grad_theta(model, theta, states)
    new_theta = model.project_theta(theta - gamma_theta * g)
    _finite(new_theta)
    return new_theta, states, g


def run_baseline(
    model: LatentModel,
    config: BaselineConfig,
    init_positions: np.ndarray | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray], bool | None] | None = None,
) -> FitResult:
    """Run one comparator; the returned ensemble is uniformly weighted.

    ``callback(k, theta_k, ensemble_k)`` mirrors the engine's hook. For SOUL
    the ensemble is the latest inner chain, for SFLA the single latent chain.
    """
    seed, kind = config.seed, config.kind
    theta = model.project_theta(as_theta(config.theta_init))
    n_init = 1 if kind in ("sfla", "soul") else config.n_particles
    if init_positions is None:
        init_positions = model.init_particles(theta, n_init, substream(seed, STREAM_INIT))
    X = np.asarray(init_positions, dtype=float).reshape(-1, model.dim_x)
    K = config.n_iterations
    thetas = np.empty((K + 1, theta.size))
    gnorm = np.full(K + 1, np.nan)
    last = K
    for k in range(K + 1):
        if k > 0 and callback is not None and callback(k, theta, X):
            last = k
        thetas[k] = theta
        if k == last:
            gnorm[k] = float(np.linalg.norm(_mean_grad_theta(model, theta, X)))
            break
        noise_rng = substream(seed, STREAM_SWEEP, k)
        theta_rng = substream(seed, STREAM_THETA, k)
        try:
            if kind == "pgd":
                gnorm[k] = float(np.linalg.norm(_mean_grad_theta(model, theta, X)))
                theta, X = pgd_step(theta, X, model, config.gamma, noise=noise_rng.standard_normal(X.shape))
            elif kind == "ipla":
                gnorm[k] = float(np.linalg.norm(_mean_grad_theta(model, theta, X)))
                theta, X = ipla_step(
                    theta, X, model, config.gamma,
                    noise=noise_rng.standard_normal(X.shape),
                    theta_noise=theta_rng.standard_normal(theta.size),
                )
            elif kind == "sfla":
                gnorm[k] = float(np.linalg.norm(_mean_grad_theta(model, theta, X)))
                theta, X = sfla_step(
                    theta, X, model, config.gamma, config.sfla_beta, config.sfla_epsilon,
                    noise=noise_rng.standard_normal(X.shape),
                    theta_noise=theta_rng.standard_normal(theta.size),
                )
            else:
                noise = noise_rng.standard_normal((config.n_particles, model.dim_x))
                theta, X, g = soul_step(theta, X, model, config.soul_theta_gamma, config.gamma, config.n_particles, noise=noise)
                gnorm[k] = float(np.linalg.norm(g))
        except ParticleDivergenceError as err:
            raise ParticleDivergenceError(iteration=k) from err

    rows = last + 1
    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    traj = Trajectory(
        theta=thetas[:rows],
        ess=np.full(rows, float(n)),
        log_evidence=np.full(rows, np.nan),
        grad_norm=gnorm[:rows],
        resampled=np.zeros(rows, dtype=bool),
        final_positions=X,
        final_weights=w,
    )
    return FitResult(theta.copy(), w, X, traj, float("nan"))
