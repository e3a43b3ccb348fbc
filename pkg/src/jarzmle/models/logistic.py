import numpy as np
from scipy.special import expit, log_expit

from jarzmle.core import LatentModel


class BayesianLogisticModel(LatentModel):
    """Logistic regression with a ``N(theta * 1, sigma0^2 I)`` prior on the weights.

    The latent variable is the weight vector and ``theta`` the scalar prior mean.
    Constants that depend on neither are dropped from the potential.
    """

    dim_theta = 1

    def __init__(self, X, y, prior_variance: float = 5.0):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on sample count")
        if prior_variance <= 0:
            raise ValueError("prior variance must be positive")
        self.prior_variance = float(prior_variance)
        self.dim_x = self.X.shape[1]

    def _logits(self, w):
        return np.asarray(w, dtype=float) @ self.X.T

    def potential(self, theta, x):
        x = np.asarray(x, dtype=float)
        t = float(np.asarray(theta, dtype=float)[0])
        z = self._logits(x)
        # log(1 + e^z) - y z  ==  -log_expit(z) + (1 - y) z ... written stably
        nll = np.sum(-log_expit(z) + (1.0 - self.y) * z, axis=-1)
        return nll + np.sum((x - t) ** 2, axis=-1) / (2 * self.prior_variance)

    def grad_x(self, theta, x):
        x = np.asarray(x, dtype=float)
        t = float(np.asarray(theta, dtype=float)[0])
        r = expit(self._logits(x)) - self.y
        return r @ self.X + (x - t) / self.prior_variance

    def grad_theta(self, theta, x):
        x = np.asarray(x, dtype=float)
        t = float(np.asarray(theta, dtype=float)[0])
        return -np.sum(x - t, axis=-1, keepdims=True) / self.prior_variance

    def potential_and_grad_x(self, theta, x):
        x = np.asarray(x, dtype=float)
        t = float(np.asarray(theta, dtype=float)[0])
        z = self._logits(x)
        dev = x - t
        u = np.sum(-log_expit(z) + (1.0 - self.y) * z, axis=-1) + np.sum(dev * dev, axis=-1) / (2 * self.prior_variance)
        g = (expit(z) - self.y) @ self.X + dev / self.prior_variance
        return u, g

    def init_particles(self, theta0, n, rng):
        t = float(np.atleast_1d(theta0)[0])
        return t + np.sqrt(self.prior_variance) * rng.standard_normal((n, self.dim_x))

    def with_data(self, X, y) -> "BayesianLogisticModel":
        return BayesianLogisticModel(X, y, self.prior_variance)

    def predict_proba(self, positions, X=None) -> np.ndarray:
        """Class probabilities, shape ``(N, n_data, 2)``."""
        X = self.X if X is None else np.asarray(X, dtype=float)
        p1 = expit(np.atleast_2d(positions) @ X.T)
        return np.stack([1.0 - p1, p1], axis=-1)


def blr_grad_w(model: BayesianLogisticModel, theta, w) -> np.ndarray:
    return model.grad_x(np.atleast_1d(theta), w)


def blr_grad_theta(model: BayesianLogisticModel, theta, w) -> float:
    return float(model.grad_theta(np.atleast_1d(theta), np.asarray(w, dtype=float))[0])
