import numpy as np
import pytest

from jarzmle.core import LatentModel


class Quadratic1D(LatentModel):
    """``U(x) = (x - m)^2 / (2 v)`` with no parameter dependence on the drift."""

    dim_x = 1
    dim_theta = 1

    def __init__(self, mean=0.0, var=1.0):
        self.mean, self.var = mean, var

    def potential(self, theta, x):
        x = np.asarray(x, dtype=float)[..., 0]
        return 0.5 * (x - self.mean) ** 2 / self.var

    def grad_x(self, theta, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.var

    def grad_theta(self, theta, x):
        return np.zeros(np.shape(x)[:-1] + (1,))

    def init_particles(self, theta0, n, rng):
        return self.mean + np.sqrt(self.var) * rng.standard_normal((n, 1))


class Constant(LatentModel):
    dim_x = 1
    dim_theta = 1

    def __init__(self, c=3.0):
        self.c = c

    def potential(self, theta, x):
        return np.full(np.shape(x)[:-1], self.c)

    def grad_x(self, theta, x):
        return np.zeros(np.shape(x))

    def grad_theta(self, theta, x):
        return np.zeros(np.shape(x)[:-1] + (1,))

    def init_particles(self, theta0, n, rng):
        return rng.standard_normal((n, 1))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def quad():
    return Quadratic1D()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
