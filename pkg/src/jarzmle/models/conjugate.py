import numpy as np

from jarzmle.core import LatentModel

_LOG_2PI = np.log(2 * np.pi)


class ConjugateGaussianModel(LatentModel):
    """``x ~ N(theta, 1)``, ``y | x ~ N(x, 1)``: every quantity is closed-form.

    Marginal ``y ~ N(theta, 2)``, posterior ``x | y ~ N((theta + y)/2, 1/2)``,
    so the maximum marginal likelihood estimate is ``theta* = y``.
    """

    dim_x = 1
    dim_theta = 1

    def __init__(self, y_obs: float = 2.0):
        self.y_obs = float(y_obs)

    def potential(self, theta, x):
        x = np.asarray(x, dtype=float)[..., 0]
        t = np.asarray(theta, dtype=float)[0]
        return 0.5 * (x - t) ** 2 + 0.5 * (self.y_obs - x) ** 2 + _LOG_2PI

    def grad_x(self, theta, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(theta, dtype=float)[0]
        return (x - t) + (x - self.y_obs)

    def grad_theta(self, theta, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(theta, dtype=float)[0]
        return t - x

    def potential_and_grad_x(self, theta, x):
        x = np.asarray(x, dtype=float)
        t = float(np.asarray(theta, dtype=float)[0])
        d1 = x[..., 0] - t
        d2 = self.y_obs - x[..., 0]
        return 0.5 * d1 * d1 + 0.5 * d2 * d2 + _LOG_2PI, (d1 - d2)[..., None]

    def posterior(self, theta):
        t = float(np.atleast_1d(theta)[0])
        return 0.5 * (t + self.y_obs), 0.5

    def log_marginal(self, theta) -> float:
        t = float(np.atleast_1d(theta)[0])
        return -0.5 * np.log(4 * np.pi) - (self.y_obs - t) ** 2 / 4.0

    def grad_marginal(self, theta) -> np.ndarray:
        """Gradient of ``V = -log p_theta(y)``."""
        t = float(np.atleast_1d(theta)[0])
        return np.array([t - 0.5 * (t + self.y_obs)])

    def init_particles(self, theta0, n, rng):
        mean, var = self.posterior(theta0)
        return mean + np.sqrt(var) * rng.standard_normal((n, 1))
