import numpy as np
from scipy.special import log_softmax, softmax

from jarzmle.core import LatentModel

_LOG_2PI = np.log(2 * np.pi)


class TinyBnnModel(LatentModel):
    """Two-layer tanh network without biases and a softmax likelihood.

    The latent vector is ``(W1.ravel(), W2.ravel())`` with ``W1`` of shape
    ``(hidden, n_features)`` and ``W2`` of shape ``(n_classes, hidden)``.
    ``theta = (a, b)`` are the log standard deviations of the isotropic
    Gaussian priors on ``W1`` and ``W2``.
    """

    dim_theta = 2

    def __init__(self, features, labels, hidden: int = 8, n_classes: int | None = None):
        self.F = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=int).reshape(-1)
        self.hidden = int(hidden)
        self.n_classes = int(n_classes if n_classes is not None else self.labels.max() + 1)
        self.n_in = self.F.shape[1]
        self.d1 = self.hidden * self.n_in
        self.d2 = self.n_classes * self.hidden
        self.dim_x = self.d1 + self.d2
        self._onehot = np.eye(self.n_classes)[self.labels]

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        W1 = x[..., : self.d1].reshape(*lead, self.hidden, self.n_in)
        W2 = x[..., self.d1 :].reshape(*lead, self.n_classes, self.hidden)
        return W1, W2

    def _forward(self, x, F):
        # activations are kept as (..., units, n_data) so every layer is a matmul
        W1, W2 = self.unpack(x)
        H = np.tanh(W1 @ F.T)
        Z = W2 @ H
        return W1, W2, H, Z

    def _prior(self, theta, W1, W2):
        a, b = float(theta[0]), float(theta[1])
        s1 = np.sum(W1 * W1, axis=(-2, -1))
        s2 = np.sum(W2 * W2, axis=(-2, -1))
        val = (
            self.d1 * a + 0.5 * s1 * np.exp(-2 * a)
            + self.d2 * b + 0.5 * s2 * np.exp(-2 * b)
            + 0.5 * self.dim_x * _LOG_2PI
        )
        return val, s1, s2

    def potential(self, theta, x):
        W1, W2, _, Z = self._forward(x, self.F)
        nll = -np.sum(log_softmax(Z, axis=-2) * self._onehot.T, axis=(-2, -1))
        return nll + self._prior(theta, W1, W2)[0]

    def potential_and_grad_x(self, theta, x):
        a, b = float(theta[0]), float(theta[1])
        W1, W2, H, Z = self._forward(x, self.F)
        logp = log_softmax(Z, axis=-2)
        u = -np.sum(logp * self._onehot.T, axis=(-2, -1)) + self._prior(theta, W1, W2)[0]
        dZ = np.exp(logp) - self._onehot.T
        dW2 = dZ @ np.swapaxes(H, -1, -2) + W2 * np.exp(-2 * b)
        dH = (np.swapaxes(W2, -1, -2) @ dZ) * (1.0 - H * H)
        dW1 = dH @ self.F + W1 * np.exp(-2 * a)
        lead = dW1.shape[:-2]
        g = np.concatenate([dW1.reshape(*lead, self.d1), dW2.reshape(*lead, self.d2)], axis=-1)
        return u, g

    def grad_x(self, theta, x):
        return self.potential_and_grad_x(theta, x)[1]

    def grad_theta(self, theta, x):
        a, b = float(theta[0]), float(theta[1])
        W1, W2 = self.unpack(x)
        s1 = np.sum(W1 * W1, axis=(-2, -1))
        s2 = np.sum(W2 * W2, axis=(-2, -1))
        return np.stack([self.d1 - s1 * np.exp(-2 * a), self.d2 - s2 * np.exp(-2 * b)], axis=-1)

    def init_particles(self, theta0, n, rng):
        a, b = float(theta0[0]), float(theta0[1])
        w1 = np.exp(a) * rng.standard_normal((n, self.d1))
        w2 = np.exp(b) * rng.standard_normal((n, self.d2))
        return np.concatenate([w1, w2], axis=1)

    def with_data(self, features, labels) -> "TinyBnnModel":
        return TinyBnnModel(features, labels, self.hidden, self.n_classes)

    def predict_proba(self, positions, features=None) -> np.ndarray:
        F = self.F if features is None else np.asarray(features, dtype=float)
        Z = self._forward(np.atleast_2d(positions), F)[3]
        return np.swapaxes(softmax(Z, axis=-2), -1, -2)
