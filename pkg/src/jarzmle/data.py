"""Dataset loading, standardisation, splitting and synthetic generators."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TabularDataset:
    """Features plus labels or regression targets.

    ``raw_features`` keeps the unstandardised values so a split can
    re-standardise with its own training statistics. ``std_ddof`` records the
    divisor convention used for ``column_stds`` (0 means population std).
    """

    features: np.ndarray
    targets: np.ndarray
    raw_features: np.ndarray | None = None
    column_means: np.ndarray | None = None
    column_stds: np.ndarray | None = None
    split: str = "full"
    indices: np.ndarray | None = None
    std_ddof: int = 0

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self.targets.astype(int)

    def subset(self, idx, split: str) -> "TabularDataset":
        idx = np.asarray(idx, dtype=int)
        base = np.arange(len(self)) if self.indices is None else self.indices
        return replace(
            self,
            features=self.features[idx],
            targets=self.targets[idx],
            raw_features=None if self.raw_features is None else self.raw_features[idx],
            split=split,
            indices=base[idx],
        )

    def metadata(self, seed: int | None = None) -> dict:
        return {
            "split": self.split,
            "seed": seed,
            "n_rows": len(self),
            "indices": None if self.indices is None else [int(i) for i in self.indices],
            "column_means": None if self.column_means is None else [float(v) for v in self.column_means],
            "column_stds": None if self.column_stds is None else [float(v) for v in self.column_stds],
            "std_ddof": self.std_ddof,
        }


def write_metadata(path, datasets: dict[str, TabularDataset], seed: int | None = None) -> None:
    payload = {name: ds.metadata(seed) for name, ds in datasets.items()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- standardisation --------------------------------------------------------


def standardize(raw, means=None, stds=None, ddof: int = 0):
    """Column-wise ``(x - mean) / std``; statistics are computed when not given."""
    raw = np.asarray(raw, dtype=float)
    if means is None:
        means = raw.mean(axis=0)
    if stds is None:
        stds = raw.std(axis=0, ddof=ddof)
    stds = np.where(stds > 0, stds, 1.0)
    return (raw - means) / stds, means, stds


def destandardize(features, means, stds) -> np.ndarray:
    return np.asarray(features, dtype=float) * stds + means


# -- Wisconsin breast cancer -------------------------------------------------


def _default_wisconsin():
    return resources.files("jarzmle.datasets").joinpath("breast-cancer-wisconsin.data")


def load_wisconsin(path=None, standardized: bool = True) -> TabularDataset:
    """Read the original UCI file: ``id, 9 integer features, class (2|4)``.

    Rows with a ``?`` are dropped; labels map 2 -> 0 (benign), 4 -> 1.
    """
    src = _default_wisconsin() if path is None else Path(path)
    feats, labels = [], []
    with src.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 11:
                raise ValueError(f"line {lineno}: expected 11 columns, found {len(parts)}")
            if "?" in parts:
                continue
            try:
                vals = [int(p) for p in parts[1:10]]
                cls = int(parts[10])
            except ValueError:
                raise ValueError(f"line {lineno}: malformed row {line!r}") from None
            if cls not in (2, 4):
                raise ValueError(f"line {lineno}: class must be 2 or 4, got {cls}")
            feats.append(vals)
            labels.append(0 if cls == 2 else 1)
    raw = np.array(feats, dtype=float).reshape(-1, 9)
    y = np.array(labels, dtype=float)
    if not standardized:
        return TabularDataset(raw, y, raw_features=raw)
    X, m, s = standardize(raw)
    return TabularDataset(X, y, raw_features=raw, column_means=m, column_stds=s)


def stratified_split(dataset: TabularDataset, fraction: float = 0.8, seed: int = 0, restandardize: bool = True):
    """Per-class shuffled split keeping ``round(fraction * n_c)`` of each class.

    With ``restandardize`` and raw features available, both parts are
    standardised with the statistics of the first part.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    labels = dataset.labels
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
        idx = rng.permutation(idx)
        n_tr = int(round(fraction * idx.size))
        train.append(idx[:n_tr])
        test.append(idx[n_tr:])
    tr = np.sort(np.concatenate(train))
    te = np.sort(np.concatenate(test))
    a, b = dataset.subset(tr, "train"), dataset.subset(te, "test")
    if restandardize and dataset.raw_features is not None and dataset.column_means is not None:
        Xa, m, s = standardize(a.raw_features, ddof=dataset.std_ddof)
        Xb = standardize(b.raw_features, m, s)[0] if len(b) else b.raw_features.copy()
        a = replace(a, features=Xa, column_means=m, column_stds=s)
        b = replace(b, features=Xb, column_means=m, column_stds=s)
    return a, b


def stratified_folds(labels, n_folds: int, seed: int) -> list[np.ndarray]:
    """Index arrays for ``n_folds`` label-stratified folds.

    Each class is shuffled and dealt out in turn; the deal continues from one
    class to the next, so leftover samples land round-robin.
    """
    labels = np.asarray(labels).astype(int)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    slot = 0
    for c in np.unique(labels):
        for i in rng.permutation(np.flatnonzero(labels == c)):
            folds[slot % n_folds].append(int(i))
            slot += 1
    return [np.sort(np.array(f, dtype=int)) for f in folds]


# -- synthetic generators ---------------------------------------------------


def student_t_noise(rng: np.random.Generator, nu: float, size) -> np.ndarray:
    """Standard Student-t draws as ``z / sqrt(chi2_nu / nu)`` with ``chi2`` from a gamma."""
    z = rng.standard_normal(size)
    chi2 = 2.0 * rng.standard_gamma(0.5 * nu, size)
    return z / np.sqrt(chi2 / nu)


def gen_linreg_data(
    d_y: int,
    d_x: int,
    alpha: float = 1.0,
    sigma: float = 1.0,
    error_kind: str = "gaussian",
    nu: float = 4.0,
    seed: int = 0,
) -> tuple[TabularDataset, np.ndarray]:
    """``X ~ N(0, I)``, ``w* ~ N(0, I / alpha)``, ``y = X w* + sigma * eps``."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d_y, d_x))
    w = rng.standard_normal(d_x) / np.sqrt(alpha)
    if error_kind == "gaussian":
        eps = rng.standard_normal(d_y)
    elif error_kind == "student_t":
        eps = student_t_noise(rng, nu, d_y)
    else:
        raise ValueError(f"unknown error kind {error_kind!r}")
    return TabularDataset(X, X @ w + sigma * eps), w


def gen_poly_data(d_y: int, p_true: int, alpha: float = 1.0, sigma2: float = 7.5, seed: int = 0) -> tuple[TabularDataset, np.ndarray]:
    """Scalar inputs ``x ~ U[-2.5, 2.5]`` with a degree-``p_true`` polynomial response.

    ``features`` holds the raw inputs as a single column.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.5, 2.5, d_y)
    w = rng.standard_normal(p_true + 1) / np.sqrt(alpha)
    Phi = x[:, None] ** np.arange(p_true + 1)
    y = Phi @ w + np.sqrt(sigma2) * rng.standard_normal(d_y)
    return TabularDataset(x[:, None], y), w


def gen_two_moons(n: int, noise: float = 0.1, seed: int = 0) -> TabularDataset:
    """Two interleaved half circles, labels 0/1, roughly half of each."""
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0, np.pi, n0)
    t1 = rng.uniform(0, np.pi, n1)
    a = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    b = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    X = np.concatenate([a, b]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0), np.ones(n1)])
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    X, m, s = standardize(X)
    return TabularDataset(X, y, column_means=m, column_stds=s)
