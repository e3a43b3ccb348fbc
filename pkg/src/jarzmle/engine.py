"""JALA-EM: parameter updates driven by a Jarzynski-weighted Langevin particle cloud.

Iteration ``k`` of :func:`run_jala_em`:

1. normalise the log-weights ``A_k``;
2. estimate ``g_k = sum_i w_i grad_theta U(theta_k, X_k^i)``;
3. ``theta_{k+1} = OPT(theta_k, g_k)`` followed by the model's projection;
4. move every particle with drift at ``theta_k``, weighting the move with the
   forward exponent at ``theta_k`` and the backward exponent at ``theta_{k+1}``;
5. resample when ``ESS / N`` drops below the configured fraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from jarzmle.core import (
    STREAM_INIT,
    STREAM_RESAMPLE,
    STREAM_SWEEP,
    JarzmleError,
    LatentModel,
    ParticleCloud,
    ParticleDivergenceError,
    RunConfig,
    ThetaState,
    Trajectory,
    WeightDegeneracyError,
    as_theta,
    substream,
)
from jarzmle.jarzynski import alpha_from_parts, ess, log_mean_exp, normalized_weights, resample_with_indices, sweep
from jarzmle.optim import opt_step, process_gradient


@dataclass
class FitResult:
    theta_final: np.ndarray
    weights_final: np.ndarray
    positions_final: np.ndarray
    trajectory: Trajectory
    log_evidence_final: float


def estimate_gradient(cloud: ParticleCloud, model: LatentModel, theta) -> np.ndarray:
    w = normalized_weights(cloud.log_weights)
    return _weighted_grad(model, as_theta(theta), cloud.positions, w)


def _weighted_grad(model, theta, positions, w):
    g = np.asarray(model.grad_theta(theta, positions), dtype=float).reshape(positions.shape[0], -1)
    return w @ g


def _reraise(err: JarzmleError, k: int):
    if isinstance(err, ParticleDivergenceError):
        return ParticleDivergenceError(iteration=k)
    if isinstance(err, WeightDegeneracyError):
        return WeightDegeneracyError(iteration=k)
    return err


def run_jala_em(
    model: LatentModel,
    config: RunConfig,
    log_Z0: float = 0.0,
    init_positions: np.ndarray | None = None,
    callback: Callable[[int, np.ndarray, ParticleCloud], bool | None] | None = None,
) -> FitResult:
    """Run JALA-EM and record one trajectory row per iteration ``0..K``.

    ``callback(k, theta_k, cloud_k)`` is called at the start of every iteration
    after the first; returning ``True`` stops the run there, so the trajectory
    then ends at row ``k``.
    """
    seed = config.seed
    n, h = config.n_particles, config.langevin_step
    theta = model.project_theta(as_theta(config.theta_init))
    if theta.size != model.dim_theta:
        raise ValueError(f"theta_init has {theta.size} entries, model expects {model.dim_theta}")
    if init_positions is None:
        init_positions = model.init_particles(theta, n, substream(seed, STREAM_INIT))
    cloud = ParticleCloud.initial(np.asarray(init_positions, dtype=float).reshape(n, model.dim_x))

    K = config.n_iterations
    thetas = np.empty((K + 1, theta.size))
    ess_rec = np.empty(K + 1)
    logz_rec = np.empty(K + 1)
    gnorm_rec = np.empty(K + 1)
    res_rec = np.zeros(K + 1, dtype=bool)
    ess_rec[0] = float(n)
    logz_rec[0] = log_Z0

    state = ThetaState(theta)
    cache = None
    last = K
    for k in range(K + 1):
        try:
            if k > 0 and callback is not None and callback(k, state.theta, cloud):
                last = k
            w = normalized_weights(cloud.log_weights)
            g = _weighted_grad(model, state.theta, cloud.positions, w)
            thetas[k] = state.theta
            gnorm_rec[k] = float(np.linalg.norm(g))
            if k == last:
                break

            step_g = process_gradient(g, config.normalize_gradients, config.max_grad_norm)
            new_state = opt_step(state, step_g, config.optimizer)
            new_state.theta = model.project_theta(new_state.theta)

            noise = substream(seed, STREAM_SWEEP, k).standard_normal((n, model.dim_x))
            u_k, grad_k = cache if cache is not None else (None, None)
            pos, lw, u_next, grad_next = sweep(
                model, state.theta, new_state.theta, cloud.positions, cloud.log_weights, h, noise, u_k, grad_k
            )
            cloud = ParticleCloud(pos, lw, cloud.evidence_segments)
            cache = (u_next, grad_next)
            state = new_state

            e = ess(normalized_weights(cloud.log_weights))
            ess_rec[k + 1] = e
            logz_rec[k + 1] = log_Z0 + sum(cloud.evidence_segments) + log_mean_exp(cloud.log_weights)
            if e / n < config.ess_threshold:
                u = float(substream(seed, STREAM_RESAMPLE, k).uniform())
                cloud, idx = resample_with_indices(cloud, u)
                cache = (u_next[idx], grad_next[idx])
                res_rec[k + 1] = True
        except JarzmleError as err:
            raise _reraise(err, k) from err

    rows = last + 1
    w_final = normalized_weights(cloud.log_weights)
    traj = Trajectory(
        theta=thetas[:rows],
        ess=ess_rec[:rows],
        log_evidence=logz_rec[:rows],
        grad_norm=gnorm_rec[:rows],
        resampled=res_rec[:rows],
        final_positions=cloud.positions,
        final_weights=w_final,
    )
    return FitResult(
        theta_final=state.theta.copy(),
        weights_final=w_final,
        positions_final=cloud.positions,
        trajectory=traj,
        log_evidence_final=float(logz_rec[last]),
    )


def mse_scaling_probe(
    model: LatentModel,
    theta_fixed,
    ns,
    trials: int,
    rng: np.random.Generator,
    n_steps: int = 10,
    h: float = 0.1,
) -> list[tuple[int, float]]:
    """Mean squared error of the weighted gradient estimate against ``grad V``.

    For each ``N`` every trial starts ``N`` particles from the model's
    initialiser and runs ``n_steps`` weighted Langevin steps at the fixed
    parameter before forming the estimate. ``model`` must expose
    ``grad_marginal``. All trials at one ``N`` are advanced together.
    """
    theta = as_theta(theta_fixed)
    target = np.asarray(model.grad_marginal(theta), dtype=float)
    out = []
    for n in ns:
        n = int(n)
        seed = int(rng.integers(2**63))
        init_rng = substream(seed, STREAM_INIT)
        pos = np.stack([model.init_particles(theta, n, init_rng) for _ in range(trials)])
        lw = np.zeros((trials, n))
        u, gx = model.potential_and_grad_x(theta, pos)
        for s in range(n_steps):
            noise = substream(seed, STREAM_SWEEP, s).standard_normal(pos.shape)
            new = pos - h * gx + np.sqrt(2 * h) * noise
            u_new, gx_new = model.potential_and_grad_x(theta, new)
            lw = lw - alpha_from_parts(u_new, gx_new, new, pos, h) + alpha_from_parts(u, gx, pos, new, h)
            pos, u, gx = new, u_new, gx_new
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        gt = np.asarray(model.grad_theta(theta, pos), dtype=float).reshape(trials, n, -1)
        g = np.einsum("tn,tnd->td", w, gt)
        out.append((n, float(np.mean(np.sum((g - target) ** 2, axis=-1)))))
    return out
