"""Evidence estimates and the model-selection procedures built on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from jarzmle.core import JarzmleError, LatentModel, RunConfig, as_theta
from jarzmle.engine import FitResult, run_jala_em
from jarzmle.models.linreg import (
    PolynomialRegModel,
    StudentTLinRegModel,
    _cholesky,
    gaussian_evidence,
    gaussian_posterior,
    poly_features,
)

__all__ = [
    "EvidenceReport",
    "ISResult",
    "MLIIResult",
    "OrderSelection",
    "bayes_factor",
    "bic",
    "fit_with_evidence",
    "gaussian_evidence",
    "gaussian_posterior",
    "importance_sampling_evidence",
    "is_evidence_student_t",
    "ml_ii_fit",
    "ols_bic_select",
    "ols_fit",
    "select_order_jala",
]

_LOG_2PI = np.log(2 * np.pi)


@dataclass
class EvidenceReport:
    model: str
    log_Z0: float
    log_Z_final: float
    log_Z_trajectory: np.ndarray = field(default_factory=lambda: np.empty(0))
    method: str = "jarzynski"
    selected: bool = False

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "log_Z0": float(self.log_Z0),
            "log_Z_final": float(self.log_Z_final),
            "method": self.method,
            "selected": bool(self.selected),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- importance sampling ----------------------------------------------------


@dataclass(frozen=True)
class ISResult:
    log_Z: float
    log_ratios: np.ndarray

    @property
    def std_error(self) -> float:
        """Standard error of the (non-log) estimate relative to itself."""
        r = np.exp(self.log_ratios - self.log_Z)
        if r.size < 2:
            return float("nan")
        return float(np.std(r, ddof=1) / np.sqrt(r.size))


def importance_sampling_evidence(
    log_target: Callable[[np.ndarray], np.ndarray],
    mean: np.ndarray,
    cov: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
) -> ISResult:
    """``log (1/S) sum_s p(w_s) / q(w_s)`` with ``q = N(mean, cov)``."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = _cholesky(np.atleast_2d(cov), "proposal covariance")
    z = rng.standard_normal((n_samples, mean.size))
    w = mean + z @ L.T
    log_q = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(np.diag(L))) - 0.5 * mean.size * _LOG_2PI
    log_r = np.asarray(log_target(w), dtype=float) - log_q
    log_r = np.where(np.isnan(log_r), -np.inf, log_r)
    if not np.any(np.isfinite(log_r)):
        raise FloatingPointError("importance sampling degenerate: every log-ratio is -inf")
    return ISResult(float(logsumexp(log_r) - np.log(n_samples)), log_r)


def is_evidence_student_t(model: StudentTLinRegModel, theta0, n_samples: int = 5000, rng=None) -> float:
    """Log marginal likelihood ``p(y | X, sigma^2, alpha, nu)`` of the Student-t model.

    The proposal is the Gaussian-likelihood posterior at the same ``sigma^2``
    and ``alpha``.
    """
    return student_t_is(model, theta0, n_samples, rng).log_Z


def student_t_is(model: StudentTLinRegModel, theta0, n_samples: int = 5000, rng=None) -> ISResult:
    rng = np.random.default_rng() if rng is None else rng
    theta0 = model.project_theta(as_theta(theta0))
    mean, cov = model.proposal(theta0)
    lp = model.theta_log_prior(theta0)
    return importance_sampling_evidence(lambda w: -model.potential(theta0, w) - lp, mean, cov, n_samples, rng)


def bayes_factor(log_Z_A: float, log_Z_B: float) -> float:
    """Log Bayes factor; positive favours ``A``."""
    return float(log_Z_A - log_Z_B)


def fit_with_evidence(model: LatentModel, config: RunConfig, log_marginal0: float, name: str = "model", **kw) -> tuple[FitResult, EvidenceReport]:
    """Run JALA-EM and report the marginal likelihood of ``y`` along the way.

    The engine tracks the normaliser of ``exp(-U)``. When ``U`` also carries a
    parameter hyperprior (the Student-t ``nu`` prior) that normaliser is the
    marginal likelihood times the prior density, so the prior is added to
    ``log_marginal0`` on the way in and removed row by row on the way out.
    """
    theta0 = model.project_theta(as_theta(config.theta_init))
    fit = run_jala_em(model, config, log_Z0=log_marginal0 + model.theta_log_prior(theta0), **kw)
    priors = np.array([model.theta_log_prior(t) for t in fit.trajectory.theta])
    traj = fit.trajectory.log_evidence - priors
    report = EvidenceReport(name, float(log_marginal0), float(traj[-1]), traj, "jarzynski")
    return fit, report


# -- type-II maximum likelihood --------------------------------------------


@dataclass(frozen=True)
class MLIIResult:
    phi: np.ndarray
    log_evidence: float
    converged: bool
    iterations: int

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.phi[0]))

    @property
    def alpha(self) -> float:
        return float(np.exp(self.phi[1]))


def _svd_evidence(X, y):
    """Closed-form ``phi -> gaussian_evidence(X, y, e^phi1, e^phi2)`` via one SVD."""
    n = y.size
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    proj = U.T @ y
    rest = float(y @ y - proj @ proj)
    s2 = s * s

    def f(phi):
        sig2, a = np.exp(phi[0]), np.exp(phi[1])
        lam = sig2 + s2 / a
        logdet = np.sum(np.log(lam)) + (n - s.size) * np.log(sig2)
        quad = np.sum(proj * proj / lam) + max(rest, 0.0) / sig2
        return float(-0.5 * (n * _LOG_2PI + logdet + quad))

    return f


def ml_ii_fit(X, y, init=(0.0, 0.0), fd_step: float = 1e-6, tol: float = 1e-8, max_iter: int = 10_000) -> MLIIResult:
    """Maximise the Gaussian evidence over ``(log sigma^2, log alpha)``.

    Gradient descent on the negative evidence with Armijo backtracking and
    central finite-difference gradients. Round-off in those differences is
    about ``eps |f| / fd_step``, so the stopping test compares the gradient
    norm with ``tol * max(1, |f|)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    X = X.reshape(y.size, -1)
    ev = _svd_evidence(X, y)
    obj = lambda p: -ev(p)

    def grad(p):
        g = np.empty(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = fd_step
            g[j] = (obj(p + e) - obj(p - e)) / (2 * fd_step)
        return g

    phi = np.asarray(init, dtype=float).copy()
    f = obj(phi)
    step = 1.0
    for it in range(max_iter):
        g = grad(phi)
        gn2 = float(g @ g)
        if np.sqrt(gn2) < tol * max(1.0, abs(f)):
            return MLIIResult(phi, -f, True, it)
        step = min(step * 2.0, 1e3)
        while True:
            cand = phi - step * g
            fc = obj(cand)
            if np.isfinite(fc) and fc <= f - 1e-4 * step * gn2:
                break
            step *= 0.5
            if step < 1e-20:
                # no descent possible at this resolution: the optimum is reached numerically
                return MLIIResult(phi, -f, True, it)
        phi, f = cand, fc
    return MLIIResult(phi, -f, False, max_iter)


# -- polynomial order selection ---------------------------------------------


def ols_fit(X, y) -> tuple[np.ndarray, float]:
    """Least squares via QR; returns ``(w_mle, ||y - Xw||^2 / d_y)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.size < X.shape[1] or np.min(d) <= 1e-12 * max(np.max(d), 1e-300) * max(X.shape):
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    w = np.linalg.solve(R, Q.T @ y)
    r = y - X @ w
    return w, float(r @ r / y.size)


def bic(p: int, d_y: int, log_lik: float) -> float:
    """``(p + 2) log d_y - 2 log_lik``: ``p + 1`` weights plus the variance."""
    return float((p + 2) * np.log(d_y) - 2.0 * log_lik)


def _gauss_loglik_at_mle(n: int, sigma2: float) -> float:
    if sigma2 <= 0:
        return np.inf
    return float(-0.5 * n * (_LOG_2PI + np.log(sigma2) + 1.0))


def ols_bic_select(x, y, orders: Sequence[int]) -> int:
    y = np.asarray(y, dtype=float).reshape(-1)
    best, best_p = np.inf, None
    for p in orders:
        _, s2 = ols_fit(poly_features(x, p), y)
        b = bic(p, y.size, _gauss_loglik_at_mle(y.size, s2))
        if b < best:
            best, best_p = b, p
    return int(best_p)


@dataclass
class OrderSelection:
    selected: int
    reports: dict[int, EvidenceReport]


def select_order_jala(x, y, orders: Sequence[int], config: RunConfig, step_cap: float | None = 0.5) -> OrderSelection:
    """Fit every candidate order with JALA-EM and keep the largest final evidence.

    Ties go to the smaller order. Monomial features make the potential very
    stiff at high orders, so with ``step_cap`` set each candidate runs with
    ``h = min(h, step_cap / lambda_max)`` where ``lambda_max`` is the largest
    Hessian eigenvalue at the initial parameters.
    """
    orders = sorted(int(p) for p in orders)
    if not orders:
        raise ValueError("no candidate orders")
    theta0 = as_theta(config.theta_init)
    reports: dict[int, EvidenceReport] = {}
    for p in orders:
        model = PolynomialRegModel(x, y, p)
        cfg = config
        if step_cap is not None:
            h = min(config.langevin_step, step_cap / model.curvature(theta0))
            cfg = replace(config, langevin_step=h)
        try:
            log_z0 = model.log_marginal(theta0)
            _, rep = fit_with_evidence(model, cfg, log_z0, name=f"order_{p}")
        except JarzmleError as err:
            raise JarzmleError(f"order {p}: {err}") from err
        reports[p] = rep
    best = orders[0]
    for p in orders[1:]:
        if reports[p].log_Z_final > reports[best].log_Z_final:
            best = p
    reports[best].selected = True
    return OrderSelection(best, reports)
