"""Predictive metrics and the cross-validated step-size search."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from jarzmle.baselines import BaselineConfig, run_baseline
from jarzmle.core import JarzmleError, LatentModel, OptimizerSpec, RunConfig
from jarzmle.data import TabularDataset, stratified_folds
from jarzmle.engine import run_jala_em
from jarzmle.jarzynski import normalized_weights
from jarzmle.models.logistic import BayesianLogisticModel

PROB_FLOOR = 1e-30


def _ensemble_average(pred_probs, weights):
    pred = np.asarray(pred_probs, dtype=float)
    if pred.ndim == 2:
        pred = pred[None]
    n = pred.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    return np.einsum("p,pic->ic", w, pred)


def lppd(pred_probs, labels, weights=None) -> float:
    """Mean log of the ensemble-averaged probability of each true label.

    ``pred_probs`` has shape ``(n_particles, n_data, n_classes)``; averaged
    probabilities are floored at 1e-30.
    """
    avg = _ensemble_average(pred_probs, weights)
    y = np.asarray(labels).astype(int)
    p = avg[np.arange(y.size), y]
    return float(np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def test_error(pred_probs, labels, weights=None) -> float:
    avg = _ensemble_average(pred_probs, weights)
    y = np.asarray(labels).astype(int)
    return float(np.mean(np.argmax(avg, axis=1) != y))


def ensemble_metrics(model, positions, weights, dataset: TabularDataset) -> tuple[float, float]:
    """``(lppd, test_error)`` of a fitted ensemble on ``dataset``."""
    pred = model.predict_proba(positions, dataset.features)
    return lppd(pred, dataset.labels, weights), test_error(pred, dataset.labels, weights)


def order_mae(selected: Sequence[int], truth: int) -> float:
    return float(np.mean(np.abs(np.asarray(selected, dtype=float) - truth)))


# -- cross-validated tuning ---------------------------------------------------


@dataclass(frozen=True)
class TuneGrid:
    particle_step_values: tuple[float, ...]
    theta_step_values: tuple[float, ...] = (0.05, 0.1, 0.15)
    folds: int = 3
    max_iters: int = 500
    early_stop_eps: float = 1e-5
    patience: int = 10
    eval_every: int = 10

    def __post_init__(self):
        if not self.particle_step_values or not self.theta_step_values:
            raise ValueError("grids must be non-empty")
        if min(self.particle_step_values) <= 0 or min(self.theta_step_values) <= 0:
            raise ValueError("step-sizes must be positive")
        object.__setattr__(self, "particle_step_values", tuple(float(v) for v in self.particle_step_values))
        object.__setattr__(self, "theta_step_values", tuple(float(v) for v in self.theta_step_values))

    @classmethod
    def from_h_euler(cls, h_euler: float, n_values: int = 10, **kw) -> "TuneGrid":
        return cls(tuple(np.linspace(0.2 * h_euler, 2.0 * h_euler, n_values)), **kw)

    def points(self, algorithm: str) -> list[tuple[float, float | None]]:
        if algorithm == "pgd":
            return [(h, None) for h in self.particle_step_values]
        return [(h, g) for h in self.particle_step_values for g in self.theta_step_values]


@dataclass
class TuneRecord:
    particle_step: float
    theta_step: float | None
    fold: int
    lppd: float
    stopped_at: int


@dataclass
class TuneResult:
    algorithm: str
    particle_step: float
    theta_step: float | None
    mean_lppd: float
    records: list[TuneRecord] = field(default_factory=list)
    failed: list[tuple[float, float | None]] = field(default_factory=list)

    def to_csv(self, header_comment: str | None = None) -> str:
        out = io.StringIO()
        if header_comment:
            out.write(f"# {header_comment}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["particle_step", "theta_step", "fold", "lppd", "stopped_at_iteration"])
        for r in self.records:
            w.writerow([repr(r.particle_step), "" if r.theta_step is None else repr(r.theta_step), r.fold, repr(r.lppd), r.stopped_at])
        return out.getvalue()


class EarlyStopper:
    """Checks held-out LPPD every ``every`` iterations and stops after
    ``patience`` checks without an improvement of at least ``eps``."""

    def __init__(self, score: Callable[[np.ndarray, np.ndarray], float], every: int, eps: float, patience: int):
        self.score, self.every, self.eps, self.patience = score, every, eps, patience
        self.best = -np.inf
        self.stale = 0

    def __call__(self, k: int, positions: np.ndarray, weights: np.ndarray) -> bool:
        if k % self.every:
            return False
        s = self.score(positions, weights)
        if s >= self.best + self.eps:
            self.best = s
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def fit_algorithm(
    algorithm: str,
    model: LatentModel,
    particle_step: float,
    theta_step: float | None,
    n_particles: int,
    n_iterations: int,
    seed: int,
    theta_init=(0.0,),
    ess_threshold: float = 1 / 1.05,
    stopper: EarlyStopper | None = None,
):
    """One run of JALA-EM or a comparator with the given step-sizes."""
    if algorithm == "jala-em":
        cfg = RunConfig(
            n_particles, n_iterations, particle_step, OptimizerSpec("sgd", theta_step),
            ess_threshold=ess_threshold, seed=seed, theta_init=tuple(theta_init),
        )
        cb = None
        if stopper is not None:
            cb = lambda k, th, cloud: stopper(k, cloud.positions, normalized_weights(cloud.log_weights))
        return run_jala_em(model, cfg, callback=cb)
    cfg = BaselineConfig(
        algorithm, particle_step, n_particles, n_iterations,
        soul_theta_gamma=theta_step if theta_step is not None else 0.1,
        seed=seed, theta_init=tuple(theta_init),
    )
    cb = None
    if stopper is not None:
        cb = lambda k, th, X: stopper(k, X, None)
    return run_baseline(model, cfg, callback=cb)


def cv_tune(
    algorithm: str,
    dataset: TabularDataset,
    grid: TuneGrid,
    seed: int = 0,
    n_particles: int = 100,
    model_factory: Callable[[np.ndarray, np.ndarray], LatentModel] = BayesianLogisticModel,
    theta_init=(0.0,),
) -> TuneResult:
    """Pick the grid point with the best mean validation LPPD over stratified folds.

    PGD tunes only its shared step; SOUL and JALA-EM tune the particle and
    parameter steps jointly. Grid points where any fold diverges are dropped.
    """
    folds = stratified_folds(dataset.labels, grid.folds, seed)
    all_idx = np.arange(len(dataset))
    records: list[TuneRecord] = []
    failed: list[tuple[float, float | None]] = []
    best: tuple[float, tuple[float, float | None]] | None = None
    for point in grid.points(algorithm):
        h, g = point
        scores = []
        try:
            for f, val_idx in enumerate(folds):
                tr = dataset.subset(np.setdiff1d(all_idx, val_idx), "train")
                va = dataset.subset(val_idx, "val")
                model = model_factory(tr.features, tr.targets)
                score = lambda pos, w: lppd(model.predict_proba(pos, va.features), va.labels, w)
                stopper = EarlyStopper(score, grid.eval_every, grid.early_stop_eps, grid.patience)
                fit = fit_algorithm(algorithm, model, h, g, n_particles, grid.max_iters, seed + f, theta_init, stopper=stopper)
                val = score(fit.positions_final, fit.weights_final)
                if not np.isfinite(val):
                    raise FloatingPointError("non-finite validation LPPD")
                scores.append(val)
                records.append(TuneRecord(h, g, f, val, len(fit.trajectory) - 1))
        except (JarzmleError, FloatingPointError, np.linalg.LinAlgError):
            failed.append(point)
            continue
        mean = float(np.mean(scores))
        if best is None or mean > best[0]:
            best = (mean, point)
    if best is None:
        raise JarzmleError(f"all grid points diverged: {failed}")
    return TuneResult(algorithm, best[1][0], best[1][1], best[0], records, failed)
