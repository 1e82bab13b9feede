#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test the vertical dataset builder

Partitioning, alignment, masking, imbalance accounting and CSV ingestion.
"""

import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from tests.builders import create_test_dataset
from xvfl.config import DATA
from xvfl.errors import ValidationError
from xvfl.tools.dataset import (
    SplitSpec,
    apply_missing,
    build_vertical_dataset,
    generate_synthetic,
    load_csv,
    masked_count,
    minmax_normalize,
    partition_dims,
    split_alignment,
    train_test_split,
)


def create_test_frame():
    return pd.DataFrame({
        "age": [20, 30, 40, 50, 60, 70],
        "income": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        "job": ["a", "b", "a", "c", "b", "a"],
        "label": ["no", "yes", "no", "yes", "no", "yes"],
    })


def test_partition_dims_sum_to_m():
    assert partition_dims(7, 2) == [4, 3]
    assert partition_dims(10, 4) == [2, 2, 2, 4]
    assert partition_dims(10, 2, [0.3, 0.7]) == [3, 7]
    with pytest.raises(ValidationError):
        partition_dims(2, 3)


def test_aligned_count_is_floor_of_ratio():
    aligned, partial = split_alignment(101, 0.4, seed=0, k=2)
    assert aligned.sum() == 40
    assert not partial[aligned].any(), "aligned samples have no partial client"
    non_aligned = ~aligned
    assert np.all(partial[non_aligned].sum(axis=1) == 1), "two clients: exactly one partial per non-aligned sample"


def test_full_overlap_has_no_non_aligned_samples():
    dataset = create_test_dataset(n=30, overlap=1.0, missing=0.9)
    assert dataset.aligned.all()
    assert not dataset.has_masks()


def test_missing_positions_per_sample_and_sentinel():
    dataset = create_test_dataset(n=60, m=10, overlap=0.3, missing=0.3, seed=4)
    for i, mask in enumerate(dataset.missing_masks):
        dim = dataset.client_dims[i]
        rows = ~dataset.aligned & dataset.partial[:, i]
        assert np.all(mask[rows].sum(axis=1) == masked_count(0.3, dim)), f"client {i} mask count"
        assert not mask[~rows].any(), f"client {i} masked outside its partial rows"
        assert np.all(dataset.blocks[i][mask] == DATA.SENTINEL)


def test_zero_and_full_missing_rates():
    none = create_test_dataset(n=30, missing=0.0)
    assert not none.has_masks()
    assert none.partial.any(), "partial designation survives a zero missing rate"

    everything = create_test_dataset(n=30, missing=1.0)
    for i, mask in enumerate(everything.missing_masks):
        rows = ~everything.aligned & everything.partial[:, i]
        assert mask[rows].all(), "missing rate 1 masks the whole slice"


def test_masking_twice_is_rejected():
    dataset = create_test_dataset(n=20, missing=0.5)
    with pytest.raises(ValidationError):
        apply_missing(dataset, 0.5, seed=0)


def test_imbalance_holdings_identity():
    n = 200
    dataset = create_test_dataset(n=n, m=6, overlap=0.2, missing=0.5, imbalance=(0.8, 0.2), seed=2)
    usable = dataset.usable_counts()
    aligned = int(dataset.aligned.sum())
    assert usable[0] + usable[1] - aligned == n, "every sample is usable somewhere exactly once"
    total = n + aligned
    assert abs(usable[0] - 0.8 * total) <= 1
    assert abs(usable[1] - 0.2 * total) <= 1


def test_infeasible_imbalance_raises():
    with pytest.raises(ValidationError):
        create_test_dataset(n=100, overlap=0.8, imbalance=(0.95, 0.05))


def test_multi_client_non_aligned_have_a_full_client():
    dataset = create_test_dataset(n=50, m=8, k=4, overlap=0.2, missing=0.7)
    non_aligned = ~dataset.aligned
    assert np.all(dataset.full[non_aligned].sum(axis=1) >= 1)
    assert np.all(dataset.partial[non_aligned].sum(axis=1) == 3)


def test_build_is_deterministic():
    first = create_test_dataset(n=50, seed=9)
    second = create_test_dataset(n=50, seed=9)
    other = create_test_dataset(n=50, seed=10)
    assert first.checksum() == second.checksum()
    assert first.checksum() != other.checksum()


def test_subset_keeps_structure():
    dataset = create_test_dataset(n=40)
    rows = np.array([0, 5, 7, 5])
    subset = dataset.subset(rows)
    assert subset.n_samples == 4
    assert np.array_equal(subset.labels, dataset.labels[rows])
    assert np.array_equal(subset.partial, dataset.partial[rows])


def test_train_test_split_and_normalisation():
    features, labels = generate_synthetic(50, 4, 2, seed=0)
    train_x, train_y, test_x, test_y = train_test_split(features, labels, 0.2, seed=0)
    assert train_x.shape[0] == 40 and test_x.shape[0] == 10
    train_scaled, test_scaled = minmax_normalize(train_x, test_x)
    assert train_scaled.min() == pytest.approx(0.0) and train_scaled.max() == pytest.approx(1.0)
    assert test_scaled.shape == test_x.shape


def test_synthetic_blobs_are_linearly_learnable():
    from sklearn.linear_model import LogisticRegression

    features, labels = generate_synthetic(600, 8, 3, seed=1)
    train_x, train_y, test_x, test_y = train_test_split(features, labels, 0.2, seed=1)
    oracle = LogisticRegression(max_iter=1000).fit(train_x, train_y)
    assert oracle.score(test_x, test_y) > 0.85, "blobs should be separable with all features"

    half = partition_dims(8, 2)[0]
    partial = LogisticRegression(max_iter=1000).fit(train_x[:, :half], train_y)
    assert partial.score(test_x[:, :half], test_y) > 0.6, "one client's block alone beats chance"


def test_load_csv_encodes_columns(tmp_path):
    path = tmp_path / "bank.csv"
    create_test_frame().to_csv(path, index=False)
    features, labels, encoder = load_csv(str(path), "label", ["job"])
    assert features.shape == (6, 2 + 3), "two scaled columns then three one-hot columns"
    assert features[:, :2].min() == 0.0 and features[:, :2].max() == 1.0
    assert np.array_equal(labels, np.array([0, 1, 0, 1, 0, 1]))
    assert encoder.classes == ["no", "yes"]


def test_unseen_category_maps_to_zero_one_hot(tmp_path, caplog):
    path = tmp_path / "train.csv"
    create_test_frame().to_csv(path, index=False)
    _, _, encoder = load_csv(str(path), "label", ["job"])

    test_frame = create_test_frame().iloc[:1].copy()
    test_frame["job"] = "z"
    with caplog.at_level(logging.WARNING):
        features, _ = encoder.transform(test_frame)
    assert np.all(features[:, 2:] == 0.0)
    assert "Unseen categories" in caplog.text


def test_non_numeric_continuous_cell_raises(tmp_path):
    frame = create_test_frame().astype({"income": object})
    frame.loc[2, "income"] = "unknown"
    path = tmp_path / "bad.csv"
    frame.to_csv(path, index=False)
    with pytest.raises(ValidationError):
        load_csv(str(path), "label", ["job"])


def test_blank_continuous_cell_raises(tmp_path):
    path = tmp_path / "blank.csv"
    path.write_text("a,b,label\n1.0,2.0,x\n,3.0,y\n2.0,1.0,x\n", encoding="utf-8")
    with pytest.raises(ValidationError) as excinfo:
        load_csv(str(path), "label")
    assert "'a'" in str(excinfo.value) and "row 1" in str(excinfo.value)


def test_inverse_continuous_recovers_inputs(tmp_path):
    path = tmp_path / "train.csv"
    frame = create_test_frame()
    frame.to_csv(path, index=False)
    features, _, encoder = load_csv(str(path), "label", ["job"])

    recovered = encoder.inverse_continuous(features)
    original = frame[["age", "income"]].to_numpy(dtype=np.float64)
    assert np.allclose(recovered, original, rtol=0.0, atol=1e-12)


def test_missing_label_column_raises(tmp_path):
    path = tmp_path / "nolabel.csv"
    create_test_frame().drop(columns=["label"]).to_csv(path, index=False)
    with pytest.raises(ValidationError):
        load_csv(str(path), "label")


def test_build_validates_split():
    features, labels = generate_synthetic(20, 4, 2, seed=0)
    with pytest.raises(ValidationError):
        build_vertical_dataset(features, labels, 2, SplitSpec(overlap_ratio=1.5))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
