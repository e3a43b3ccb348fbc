"""First-order parameter updates and Langevin step-size heuristics."""

from __future__ import annotations

from typing import Callable

import numpy as np

from jarzmle.core import OptimizerSpec, ThetaState


def sgd_step(theta, g, gamma: float) -> np.ndarray:
    return np.asarray(theta, dtype=float) - gamma * np.asarray(g, dtype=float)


def adam_step(state: ThetaState, g, spec: OptimizerSpec) -> ThetaState:
    g = np.asarray(g, dtype=float)
    m = state.optimizer_state.get("m", np.zeros_like(state.theta))
    v = state.optimizer_state.get("v", np.zeros_like(state.theta))
    t = state.optimizer_state.get("t", 0) + 1
    m = spec.beta1 * m + (1.0 - spec.beta1) * g
    v = spec.beta2 * v + (1.0 - spec.beta2) * g * g
    m_hat = m / (1.0 - spec.beta1**t)
    v_hat = v / (1.0 - spec.beta2**t)
    theta = state.theta - spec.gamma * m_hat / (np.sqrt(v_hat) + spec.epsilon)
    return ThetaState(theta, {"m": m, "v": v, "t": t}, state.iteration + 1)


def opt_step(state: ThetaState, g, spec: OptimizerSpec) -> ThetaState:
    if spec.kind == "adam":
        return adam_step(state, g, spec)
    return ThetaState(sgd_step(state.theta, g, spec.gamma), state.optimizer_state, state.iteration + 1)


def process_gradient(g: np.ndarray, normalize: bool = False, max_norm: float | None = None) -> np.ndarray:
    """Optional unit-norm rescaling followed by norm clipping."""
    norm = float(np.linalg.norm(g))
    if normalize and norm > 0:
        g = g / norm
        norm = 1.0
    if max_norm is not None and norm > max_norm:
        g = g * (max_norm / norm)
    return g


def hessian_bound_blr(X, sigma0_sq: float) -> Callable[[np.ndarray], np.ndarray]:
    """Matrix-free ``v -> X^T X v / 4 + v / sigma0^2``.

    The logistic curvature ``s(1-s)`` never exceeds 1/4, so this dominates the
    Hessian of the logistic-regression potential at every weight vector.
    """
    X = np.asarray(X, dtype=float)
    if sigma0_sq <= 0:
        raise ValueError("prior variance must be positive")

    def op(v):
        return 0.25 * (X.T @ (X @ v)) + v / sigma0_sq

    op.dim = X.shape[1]
    return op


class PowerIterationResult(float):
    """Dominant eigenvalue that also carries ``converged`` and ``iterations``."""

    converged: bool
    iterations: int

    def __new__(cls, value, converged, iterations):
        obj = super().__new__(cls, value)
        obj.converged = converged
        obj.iterations = iterations
        return obj


def power_iteration(op, dim: int, iters: int = 1000, tol: float = 1e-12, rng: np.random.Generator | None = None) -> PowerIterationResult:
    if callable(op):
        apply = op
    else:
        mat = np.asarray(op, dtype=float)
        apply = lambda v: mat @ v
    rng = np.random.default_rng(0) if rng is None else rng
    for _ in range(3):
        v = rng.standard_normal(dim)
        if np.linalg.norm(v) > 0:
            break
    else:
        raise RuntimeError("power iteration could not draw a non-zero start vector")
    v /= np.linalg.norm(v)
    lam = float(v @ apply(v))
    for it in range(1, iters + 1):
        w = apply(v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return PowerIterationResult(0.0, True, it)
        v = w / nw
        new_lam = float(v @ apply(v))
        if abs(new_lam - lam) < tol * max(1.0, abs(new_lam)):
            return PowerIterationResult(new_lam, True, it)
        lam = new_lam
    return PowerIterationResult(lam, False, iters)


def h_euler(lambda_max: float) -> float:
    if not lambda_max > 0:
        raise ValueError("lambda_max must be positive")
    return 0.99 / lambda_max
