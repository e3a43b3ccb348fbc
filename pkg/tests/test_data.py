import json

import numpy as np
import pytest
from scipy.stats import kurtosis

from jarzmle.data import (
    TabularDataset,
    destandardize,
    gen_linreg_data,
    gen_poly_data,
    gen_two_moons,
    load_wisconsin,
    standardize,
    stratified_folds,
    stratified_split,
    write_metadata,
)

ROW = "1000025,5,1,1,1,2,1,3,1,1,2"


def test_canonical_wisconsin():
    ds = load_wisconsin()
    assert ds.features.shape == (683, 9)
    assert set(np.unique(ds.labels)) == {0, 1}
    assert np.all(np.abs(ds.features.mean(axis=0)) < 1e-9)
    assert np.allclose(ds.features.std(axis=0), 1.0, atol=1e-9)


def _write(tmp_path, lines):
    p = tmp_path / "bc.data"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_missing_rows_dropped(tmp_path):
    rows = [f"{i},{(i % 9) + 1},1,2,1,2,1,3,1,1,{2 if i % 2 else 4}" for i in range(9)]
    rows.append("99,5,1,1,1,2,?,3,1,1,2")
    assert len(load_wisconsin(_write(tmp_path, rows))) == 9


def test_wrong_column_count(tmp_path):
    with pytest.raises(ValueError, match="line 2: expected 11 columns"):
        load_wisconsin(_write(tmp_path, [ROW, "1,2,3"]))


def test_malformed_row(tmp_path):
    with pytest.raises(ValueError, match="line 1: malformed"):
        load_wisconsin(_write(tmp_path, [ROW.replace(",5,", ",x,")]))


def test_bad_class(tmp_path):
    with pytest.raises(ValueError, match="class must be 2 or 4"):
        load_wisconsin(_write(tmp_path, [ROW[:-1] + "3"]))


def _toy(n0=60, n1=40, seed=0):
    rng = np.random.default_rng(seed)
    raw = rng.normal(3, 2, (n0 + n1, 3))
    X, m, s = standardize(raw)
    return TabularDataset(X, np.r_[np.zeros(n0), np.ones(n1)], raw, m, s)


def test_stratified_split_exact_counts():
    tr, te = stratified_split(_toy(), 0.8, seed=1)
    assert (np.sum(tr.labels == 0), np.sum(tr.labels == 1)) == (48, 32)
    assert len(te) == 20
    assert not set(tr.indices) & set(te.indices)


def test_split_restandardizes_with_train_statistics():
    tr, te = stratified_split(_toy(), 0.8, seed=1)
    assert np.all(np.abs(tr.features.mean(axis=0)) < 1e-9)
    assert np.allclose(tr.features.std(axis=0), 1.0, atol=1e-9)
    assert np.allclose(te.features, (te.raw_features - tr.column_means) / tr.column_stds)


def test_split_full_fraction_and_determinism():
    ds = _toy()
    tr, te = stratified_split(ds, 1.0, seed=3)
    assert len(te) == 0 and len(tr) == 100
    a, b = stratified_split(ds, 0.8, seed=5), stratified_split(ds, 0.8, seed=5)
    assert np.array_equal(a[0].indices, b[0].indices) and np.array_equal(a[1].indices, b[1].indices)


def test_split_rejects_singleton_class():
    with pytest.raises(ValueError, match="fewer than 2"):
        stratified_split(_toy(10, 1), 0.8)


def test_folds_partition_and_stratify():
    labels = np.r_[np.zeros(10), np.ones(7)]
    folds = stratified_folds(labels, 3, seed=0)
    assert sorted(np.concatenate(folds).tolist()) == list(range(17))
    counts = [np.sum(labels[f] == 1) for f in folds]
    assert max(counts) - min(counts) <= 1
    assert max(map(len, folds)) - min(map(len, folds)) <= 1


def test_destandardize_inverts():
    raw = np.random.default_rng(2).normal(5, 3, (50, 4))
    X, m, s = standardize(raw)
    assert np.max(np.abs(destandardize(X, m, s) - raw)) < 1e-10


def test_metadata_written(tmp_path):
    tr, te = stratified_split(_toy(), 0.8, seed=1)
    write_metadata(tmp_path / "meta.json", {"train": tr, "test": te}, seed=1)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["train"]["indices"] == tr.indices.tolist()
    assert meta["test"]["std_ddof"] == 0 and meta["train"]["seed"] == 1
    assert meta["train"]["column_means"] == pytest.approx(tr.column_means.tolist())


def test_linreg_noiseless_and_deterministic():
    ds, w = gen_linreg_data(30, 4, sigma=0.0, seed=3)
    assert np.array_equal(ds.targets, ds.features @ w)
    ds2, _ = gen_linreg_data(30, 4, sigma=0.0, seed=3)
    assert np.array_equal(ds.features, ds2.features)


def test_linreg_gaussian_residual_variance():
    n = 100_000
    ds, w = gen_linreg_data(n, 2, sigma=1.0, seed=4)
    r = ds.targets - ds.features @ w
    assert abs(r.var() - 1.0) < 3 * np.sqrt(2.0 / n)


def test_linreg_student_t_heavy_tails():
    n = 100_000
    ds, w = gen_linreg_data(n, 2, error_kind="student_t", nu=4.0, seed=5)
    r = ds.targets - ds.features @ w
    excess = kurtosis(r)
    assert excess > 3 * np.sqrt(24.0 / n) and excess > 1.0


def test_linreg_rejects_unknown_error():
    with pytest.raises(ValueError):
        gen_linreg_data(5, 1, error_kind="laplace")


def test_poly_generators():
    ds, w = gen_poly_data(200, 0, seed=6)
    assert np.allclose(np.mean(ds.targets - w[0]), 0, atol=3 * np.sqrt(7.5 / 200))
    ds, w = gen_poly_data(50, 1, sigma2=0.0, seed=7)
    x = ds.features[:, 0]
    assert np.allclose(ds.targets, w[0] + w[1] * x, atol=1e-12)
    assert np.all((x >= -2.5) & (x <= 2.5))
    a, _ = gen_poly_data(20, 3, seed=8)
    b, _ = gen_poly_data(20, 3, seed=8)
    assert np.array_equal(a.targets, b.targets)


def test_two_moons_balanced_and_standardized():
    ds = gen_two_moons(201, 0.1, seed=9)
    assert abs(np.sum(ds.labels) - 100.5) <= 0.5
    assert np.allclose(ds.features.mean(axis=0), 0, atol=1e-12)
