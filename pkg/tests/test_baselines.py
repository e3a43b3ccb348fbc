import math

import numpy as np
import pytest

from conftest import Constant
from jarzmle.baselines import BaselineConfig, ipla_step, pgd_step, run_baseline, sfla_step, soul_step
from jarzmle.core import OptimizerSpec, RunConfig
from jarzmle.engine import run_jala_em
from jarzmle.models import ConjugateGaussianModel

ORACLE = ConjugateGaussianModel(2.0)


def test_pgd_fixed_point_without_gradient_or_noise():
    th, X = pgd_step([0.4], np.ones((3, 1)), Constant(), 0.1, noise=np.zeros((3, 1)))
    assert th[0] == 0.4 and np.all(X == 1.0)


def test_pgd_single_particle_hand_trace():
    th, X = pgd_step([0.0], np.array([[2.0]]), ORACLE, 0.1, noise=np.zeros((1, 1)))
    assert th[0] == pytest.approx(0.2, abs=1e-15)
    # the particle moves with the old parameter: grad_x U(0, 2) = 2
    assert X[0, 0] == pytest.approx(1.8, abs=1e-15)


def test_pgd_oracle_convergence():
    fit = run_baseline(ORACLE, BaselineConfig("pgd", 0.1, 100, 500, seed=0))
    assert abs(fit.theta_final[0] - 2.0) < 0.15
    assert len(fit.trajectory) == 501 and np.all(np.isnan(fit.trajectory.log_evidence))
    assert ",resampled" in fit.trajectory.to_csv().splitlines()[0]


def test_ipla_forced_noise():
    th, _ = ipla_step([0.3], np.zeros((2, 1)), Constant(), 0.5, noise=np.zeros((2, 1)), theta_noise=np.ones(1))
    assert th[0] == pytest.approx(0.3 + math.sqrt(0.5), abs=1e-15)


def test_ipla_without_theta_noise_equals_pgd():
    rng = np.random.default_rng(0)
    X, noise = rng.standard_normal((1, 1)), rng.standard_normal((1, 1))
    a = pgd_step([0.5], X, ORACLE, 0.1, noise=noise)
    b = ipla_step([0.5], X, ORACLE, 0.1, noise=noise, theta_noise=np.zeros(1))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_ipla_approaches_pgd_for_large_n():
    a = run_baseline(ORACLE, BaselineConfig("pgd", 0.1, 10_000, 100, seed=3))
    b = run_baseline(ORACLE, BaselineConfig("ipla", 0.1, 10_000, 100, seed=3))
    assert np.max(np.abs(a.trajectory.theta - b.trajectory.theta)) < 0.05


def test_ipla_oracle_convergence():
    fit = run_baseline(ORACLE, BaselineConfig("ipla", 0.1, 100, 500, seed=1))
    assert abs(fit.theta_final[0] - 2.0) < 0.15


def test_sfla_limit_is_single_particle_pgd():
    rng = np.random.default_rng(1)
    th, x = np.array([0.0]), rng.standard_normal((1, 1))
    th2, x2 = th.copy(), x.copy()
    for _ in range(20):
        noise = rng.standard_normal((1, 1))
        th, x = sfla_step(th, x, ORACLE, 0.1, 1e300, 1.0, noise=noise, theta_noise=np.zeros(1))
        th2, x2 = pgd_step(th2, x2, ORACLE, 0.1, noise=noise)
    assert np.array_equal(th, th2) and np.array_equal(x, x2)


def test_sfla_one_step_hand_trace():
    _, x = sfla_step([0.0], np.array([[2.0]]), ORACLE, 0.1, 1e3, 0.5, noise=np.zeros((1, 1)), theta_noise=np.zeros(1))
    assert x[0, 0] == pytest.approx(2.0 - 0.2 * 2.0, abs=1e-15)


def test_sfla_oracle_convergence():
    # x-step gamma/epsilon must stay below the oracle's stability limit of 1
    finals = [run_baseline(ORACLE, BaselineConfig("sfla", 0.01, 1, 2000, sfla_beta=1e3, sfla_epsilon=0.1, seed=s)).theta_final[0] for s in range(20)]
    assert abs(np.mean(finals) - 2.0) < 0.2


def test_soul_single_inner_step_structure():
    noise = np.array([[0.3]])
    th, states, g = soul_step([0.0], np.array([[2.0]]), ORACLE, 0.2, 0.1, 1, noise=noise)
    x_new = 2.0 - 0.1 * 2.0 + math.sqrt(0.2) * 0.3
    assert states.shape == (1, 1) and states[0, 0] == pytest.approx(x_new)
    assert g[0] == pytest.approx(0.0 - x_new) and th[0] == pytest.approx(-0.2 * (0.0 - x_new))


def test_soul_rejects_empty_inner_chain():
    with pytest.raises(ValueError):
        soul_step([0.0], np.zeros((1, 1)), ORACLE, 0.1, 0.1, 0, noise=np.zeros((0, 1)))


def test_soul_oracle_convergence():
    fit = run_baseline(ORACLE, BaselineConfig("soul", 0.1, 100, 500, soul_theta_gamma=0.1, seed=0))
    assert abs(fit.theta_final[0] - 2.0) < 0.15


def test_soul_inner_chain_time_average():
    n = 40_000
    _, states, _ = soul_step([0.0], np.array([[0.0]]), ORACLE, 1e-12, 0.05, n, rng=np.random.default_rng(2))
    x = states[:, 0]
    batches = x.reshape(100, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(100)
    assert abs(x.mean() - 1.0) < 3 * se


def test_baseline_config_validation():
    for kw in (dict(kind="em", gamma=0.1), dict(kind="pgd", gamma=0.0), dict(kind="sfla", gamma=0.1, sfla_beta=0.0)):
        with pytest.raises(ValueError):
            BaselineConfig(**kw)


def test_baselines_deterministic():
    cfg = BaselineConfig("ipla", 0.1, 20, 30, seed=9)
    assert run_baseline(ORACLE, cfg).trajectory.to_csv() == run_baseline(ORACLE, cfg).trajectory.to_csv()


def test_all_algorithms_agree_on_oracle_mmle():
    seeds = range(50)
    means = {
        "pgd": np.mean([run_baseline(ORACLE, BaselineConfig("pgd", 0.1, 100, 500, seed=s)).theta_final[0] for s in seeds]),
        "ipla": np.mean([run_baseline(ORACLE, BaselineConfig("ipla", 0.1, 100, 500, seed=s)).theta_final[0] for s in seeds]),
        "sfla": np.mean([run_baseline(ORACLE, BaselineConfig("sfla", 0.01, 1, 2000, seed=s)).theta_final[0] for s in seeds]),
        "soul": np.mean([run_baseline(ORACLE, BaselineConfig("soul", 0.1, 100, 500, seed=s)).theta_final[0] for s in seeds]),
        "jala-em": np.mean(
            [run_jala_em(ORACLE, RunConfig(100, 500, 0.1, OptimizerSpec("sgd", 0.1), 1 / 1.05, s)).theta_final[0] for s in seeds]
        ),
    }
    vals = np.array(list(means.values()))
    assert np.ptp(vals) < 0.2, means
    assert np.all(np.abs(vals - 2.0) < 0.2), means
