"""Bayesian linear regression with Gaussian or Student-t observation errors.

Parameters are log-transformed: ``phi1 = log sigma^2``, ``phi2 = log alpha``
(weight-prior precision) and, for Student-t errors, ``phi3 = log nu``.
All parameter-dependent normalizers are kept in the potential because they
contribute to the parameter gradient.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import digamma, gammaln

from jarzmle.core import LatentModel

_LOG_2PI = np.log(2 * np.pi)


def _cholesky(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(mat)
        raise np.linalg.LinAlgError(
            f"{what} is not positive definite: smallest eigenvalue {eig[0]:.3e}, "
            f"condition number {abs(eig[-1]) / max(abs(eig[0]), 1e-300):.3e}"
        ) from None


def gaussian_evidence(X, y, sigma2: float, alpha: float) -> float:
    """``log N(y | 0, sigma2 I + X X^T / alpha)`` via a Cholesky factorization."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if sigma2 <= 0 or alpha <= 0:
        raise ValueError("sigma2 and alpha must be positive")
    X = X.reshape(y.size, -1)
    cov = sigma2 * np.eye(y.size) + (X @ X.T) / alpha
    L = _cholesky(cov, "marginal covariance")
    z = solve_triangular(L, y, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (y.size * _LOG_2PI + logdet + z @ z))


def gaussian_posterior(X, y, sigma2: float, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of the weights: ``(X^T X / s2 + alpha I)^-1``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    X = X.reshape(y.size, -1)
    prec = X.T @ X / sigma2 + alpha * np.eye(X.shape[1])
    L = _cholesky(prec, "posterior precision")
    Linv = np.linalg.inv(L)
    cov = Linv.T @ Linv
    mean = cov @ (X.T @ y) / sigma2
    return mean, cov


class GaussianLinRegModel(LatentModel):
    def __init__(self, X, y):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on sample count")
        self.dim_x = self.X.shape[1]
        self.dim_theta = 2
        self._n = self.y.size

    def _resid(self, w):
        return self.y - np.asarray(w, dtype=float) @ self.X.T

    def potential(self, theta, x):
        phi1, phi2 = float(theta[0]), float(theta[1])
        w = np.asarray(x, dtype=float)
        r = self._resid(w)
        n, d = self._n, self.dim_x
        return (
            0.5 * n * (_LOG_2PI + phi1)
            + 0.5 * np.exp(-phi1) * np.sum(r * r, axis=-1)
            + 0.5 * d * (_LOG_2PI - phi2)
            + 0.5 * np.exp(phi2) * np.sum(w * w, axis=-1)
        )

    def grad_x(self, theta, x):
        phi1, phi2 = float(theta[0]), float(theta[1])
        w = np.asarray(x, dtype=float)
        return -np.exp(-phi1) * (self._resid(w) @ self.X) + np.exp(phi2) * w

    def potential_and_grad_x(self, theta, x):
        phi1, phi2 = float(theta[0]), float(theta[1])
        w = np.asarray(x, dtype=float)
        r = self._resid(w)
        inv_s2, a = np.exp(-phi1), np.exp(phi2)
        u = (
            0.5 * self._n * (_LOG_2PI + phi1)
            + 0.5 * inv_s2 * np.sum(r * r, axis=-1)
            + 0.5 * self.dim_x * (_LOG_2PI - phi2)
            + 0.5 * a * np.sum(w * w, axis=-1)
        )
        return u, -inv_s2 * (r @ self.X) + a * w

    def grad_theta(self, theta, x):
        phi1, phi2 = float(theta[0]), float(theta[1])
        w = np.asarray(x, dtype=float)
        r = self._resid(w)
        g1 = 0.5 * self._n - 0.5 * np.exp(-phi1) * np.sum(r * r, axis=-1)
        g2 = -0.5 * self.dim_x + 0.5 * np.exp(phi2) * np.sum(w * w, axis=-1)
        return np.stack([g1, g2], axis=-1)

    def log_marginal(self, theta) -> float:
        return gaussian_evidence(self.X, self.y, np.exp(theta[0]), np.exp(theta[1]))

    def posterior(self, theta):
        return gaussian_posterior(self.X, self.y, np.exp(theta[0]), np.exp(theta[1]))

    def curvature(self, theta) -> float:
        """Largest eigenvalue of the x-Hessian ``X^T X / sigma^2 + alpha I``."""
        H = self.X.T @ self.X * np.exp(-theta[0]) + np.exp(theta[1]) * np.eye(self.dim_x)
        return float(np.linalg.eigvalsh(H)[-1])

    def init_particles(self, theta0, n, rng):
        mean, cov = self.posterior(theta0)
        L = _cholesky(cov, "posterior covariance")
        return mean + rng.standard_normal((n, self.dim_x)) @ L.T


def poly_features(x, order: int) -> np.ndarray:
    """Columns ``[1, x, x^2, ..., x^order]``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return x[:, None] ** np.arange(order + 1)


class PolynomialRegModel(GaussianLinRegModel):
    def __init__(self, x, y, order: int):
        if order < 0:
            raise ValueError("order must be non-negative")
        self.order = int(order)
        self.x_raw = np.asarray(x, dtype=float).reshape(-1)
        super().__init__(poly_features(self.x_raw, self.order), y)


class StudentTLinRegModel(LatentModel):
    """Student-t errors with an exponential(rate) prior on the degrees of freedom.

    ``phi3`` is clipped to ``[log nu_min, log nu_max]``; the engine projects
    parameter iterates onto that box and the potential evaluates at the clipped
    value.
    """

    def __init__(self, X, y, nu_rate: float = 0.1, nu_bounds: tuple[float, float] = (0.2, 5.0)):
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on sample count")
        self.dim_x = self.X.shape[1]
        self.dim_theta = 3
        self.nu_rate = float(nu_rate)
        self.log_nu_bounds = (float(np.log(nu_bounds[0])), float(np.log(nu_bounds[1])))
        self._n = self.y.size

    def clip_phi3(self, phi3: float) -> tuple[float, bool]:
        lo, hi = self.log_nu_bounds
        c = min(max(float(phi3), lo), hi)
        return c, c != float(phi3)

    def project_theta(self, theta):
        theta = np.array(theta, dtype=float)
        theta[2] = self.clip_phi3(theta[2])[0]
        return theta

    def theta_log_prior(self, theta) -> float:
        nu = np.exp(self.clip_phi3(theta[2])[0])
        return float(np.log(self.nu_rate) - self.nu_rate * nu)

    def _parts(self, theta, x):
        phi1, phi2 = float(theta[0]), float(theta[1])
        phi3, _ = self.clip_phi3(theta[2])
        s, nu = np.exp(phi1), np.exp(phi3)
        w = np.asarray(x, dtype=float)
        r = self.y - w @ self.X.T
        return phi1, phi2, phi3, s, nu, w, r

    def log_likelihood_terms(self, theta, x) -> np.ndarray:
        """Per-observation Student-t log-density, shape ``(..., d_y)``."""
        _, _, _, s, nu, _, r = self._parts(theta, x)
        return (
            gammaln(0.5 * (nu + 1))
            - gammaln(0.5 * nu)
            - 0.5 * np.log(np.pi * nu * s)
            - 0.5 * (nu + 1) * np.log1p(r * r / (nu * s))
        )

    def potential(self, theta, x):
        _, phi2, _, _, nu, w, _ = self._parts(theta, x)
        ll = np.sum(self.log_likelihood_terms(theta, x), axis=-1)
        prior_w = 0.5 * self.dim_x * (_LOG_2PI - phi2) + 0.5 * np.exp(phi2) * np.sum(w * w, axis=-1)
        return -ll + prior_w - self.theta_log_prior(theta)

    def grad_x(self, theta, x):
        _, phi2, _, s, nu, w, r = self._parts(theta, x)
        coef = -(nu + 1) * r / (nu * s + r * r)
        return coef @ self.X + np.exp(phi2) * w

    def potential_and_grad_x(self, theta, x):
        _, phi2, _, s, nu, w, r = self._parts(theta, x)
        ll = np.sum(
            gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu) - 0.5 * np.log(np.pi * nu * s)
            - 0.5 * (nu + 1) * np.log1p(r * r / (nu * s)),
            axis=-1,
        )
        a = np.exp(phi2)
        u = -ll + 0.5 * self.dim_x * (_LOG_2PI - phi2) + 0.5 * a * np.sum(w * w, axis=-1) - self.theta_log_prior(theta)
        g = (-(nu + 1) * r / (nu * s + r * r)) @ self.X + a * w
        return u, g

    def grad_theta(self, theta, x):
        _, phi2, _, s, nu, w, r = self._parts(theta, x)
        _, clipped = self.clip_phi3(theta[2])
        r2 = r * r
        denom = nu * s + r2
        g1 = np.sum(0.5 - 0.5 * (nu + 1) * r2 / denom, axis=-1)
        g2 = -0.5 * self.dim_x + 0.5 * np.exp(phi2) * np.sum(w * w, axis=-1)
        # d(-loglik)/d nu, summed over observations
        d_nu = np.sum(
            -0.5 * digamma(0.5 * (nu + 1)) + 0.5 * digamma(0.5 * nu) + 0.5 / nu
            + 0.5 * np.log1p(r2 / (nu * s))
            - 0.5 * (nu + 1) * r2 / (nu * denom),
            axis=-1,
        )
        g3 = nu * (d_nu + self.nu_rate)
        if clipped:
            g3 = np.zeros_like(g3)
        return np.stack([g1, g2, g3], axis=-1)

    def proposal(self, theta):
        """Gaussian-likelihood posterior at ``(sigma^2, alpha)``: the IS proposal."""
        return gaussian_posterior(self.X, self.y, np.exp(theta[0]), np.exp(theta[1]))

    def init_particles(self, theta0, n, rng, n_steps: int = 200, eps0: float = 1e-3):
        """Short ULA chains started from the weight prior, one per particle.

        Each chain adapts its own step: shrink by 0.9 while the gradient norm
        exceeds ``1000 d_x`` (down to 1e-6), grow by 1.05 while it is below
        ``10 d_x`` (up to 0.1).
        """
        theta0 = self.project_theta(theta0)
        d = self.dim_x
        w = rng.standard_normal((n, d)) * np.exp(-0.5 * theta0[1])
        eps = np.full(n, eps0)
        for _ in range(n_steps):
            g = self.grad_x(theta0, w)
            gn = np.linalg.norm(g, axis=-1)
            w = w - eps[:, None] * g + np.sqrt(2 * eps)[:, None] * rng.standard_normal((n, d))
            shrink = (gn > 1000 * d) & (eps > 1e-6)
            grow = (gn < 10 * d) & (eps < 0.1) & ~shrink
            eps = np.where(shrink, 0.9 * eps, np.where(grow, 1.05 * eps, eps))
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("Student-t warm start diverged")
        return w


def student_t_grad_phi(model: StudentTLinRegModel, phi, w) -> tuple[np.ndarray, bool]:
    """Parameter gradient plus a flag telling whether ``phi3`` had to be clipped."""
    phi = np.asarray(phi, dtype=float)
    _, clipped = model.clip_phi3(phi[2])
    return model.grad_theta(phi, w), clipped
