#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Vertical Dataset Builder

CSV ingestion with min-max / one-hot preprocessing, a synthetic blob
generator, contiguous vertical partitioning, aligned / non-aligned splitting,
per-sample feature masking and imbalanced ownership splits.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split as sk_train_test_split
from sklearn.preprocessing import MinMaxScaler, OneHotEncoder

from ..config import DATA
from ..errors import ValidationError
from .numkit import DenseMatrix, named_rng

logger = logging.getLogger(__name__)


@dataclass
class SplitSpec:
    """How samples are aligned, masked and owned"""
    overlap_ratio: float = DATA.OVERLAP_RATIO
    missing_rate: float = DATA.MISSING_RATE
    imbalance: Optional[Tuple[float, ...]] = None
    seed: int = 0

    def validate(self) -> "SplitSpec":
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValidationError(f"overlap_ratio must be in [0, 1], got {self.overlap_ratio}")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValidationError(f"missing_rate must be in [0, 1], got {self.missing_rate}")
        if self.imbalance is not None:
            if any(not 0.0 < f <= 1.0 for f in self.imbalance):
                raise ValidationError(f"imbalance fractions must each be in (0, 1], got {self.imbalance}")
            if abs(sum(self.imbalance) - 1.0) > 1e-9:
                raise ValidationError(f"imbalance fractions must sum to 1, got {self.imbalance}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "overlap_ratio": self.overlap_ratio,
            "missing_rate": self.missing_rate,
            "imbalance": list(self.imbalance) if self.imbalance is not None else None,
            "seed": self.seed,
        }


@dataclass
class VerticalDataset:
    """
    Labels plus per-client feature blocks

    partial[s, i] marks client i as a designated partial client of non-aligned
    sample s; the remaining clients of that sample are its full clients.
    """
    labels: np.ndarray
    blocks: List[DenseMatrix]
    aligned: np.ndarray
    partial: np.ndarray
    missing_masks: List[np.ndarray]
    n_classes: int
    split: Optional[SplitSpec] = None

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def client_dims(self) -> List[int]:
        return [int(block.shape[1]) for block in self.blocks]

    @property
    def full(self) -> np.ndarray:
        """n x k: client holds its full local feature slice"""
        return ~self.partial

    def usable_counts(self) -> List[int]:
        """Samples each client can use with its full features (aligned + own non-aligned)"""
        return [int(n) for n in self.full.sum(axis=0)]

    def has_masks(self) -> bool:
        return any(mask.any() for mask in self.missing_masks)

    def features(self) -> DenseMatrix:
        return np.concatenate(self.blocks, axis=1)

    def subset(self, rows: np.ndarray) -> "VerticalDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return VerticalDataset(
            labels=self.labels[rows],
            blocks=[block[rows] for block in self.blocks],
            aligned=self.aligned[rows],
            partial=self.partial[rows],
            missing_masks=[mask[rows] for mask in self.missing_masks],
            n_classes=self.n_classes,
            split=self.split,
        )

    def validate(self) -> "VerticalDataset":
        n = self.n_samples
        for i, (block, mask) in enumerate(zip(self.blocks, self.missing_masks)):
            if block.shape[0] != n or mask.shape != block.shape:
                raise ValidationError(f"Client {i} block/mask shapes {block.shape}/{mask.shape} do not match n={n}")
            if np.any(block[mask] != DATA.SENTINEL):
                raise ValidationError(f"Client {i} has masked positions not holding the sentinel")
        if self.partial.shape != (n, self.k):
            raise ValidationError(f"partial flags must be {(n, self.k)}, got {self.partial.shape}")
        if np.any(self.partial[self.aligned]):
            raise ValidationError("Aligned samples cannot have partial clients")
        for i, mask in enumerate(self.missing_masks):
            if np.any(mask[self.aligned]):
                raise ValidationError(f"Client {i} has masked features on aligned samples")
            if np.any(mask[~self.partial[:, i]]):
                raise ValidationError(f"Client {i} has masked features where it is a full client")
        if self.k > 1:
            no_full = self.partial.all(axis=1)
            if np.any(no_full):
                raise ValidationError(f"{int(no_full.sum())} samples have no full-feature client")
            if np.any(~self.aligned & ~self.partial.any(axis=1)):
                raise ValidationError("Non-aligned samples need at least one partial client")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError("Labels out of range")
        return self

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.labels.astype(np.int64).tobytes())
        digest.update(self.aligned.tobytes())
        digest.update(self.partial.tobytes())
        for mask in self.missing_masks:
            digest.update(mask.tobytes())
        return digest.hexdigest()[:16]

    def manifest(self) -> Dict[str, Any]:
        non_aligned = ~self.aligned
        return {
            "n_samples": self.n_samples,
            "n_clients": self.k,
            "n_classes": self.n_classes,
            "client_dims": self.client_dims,
            "aligned": int(self.aligned.sum()),
            "non_aligned_full_at": [int((non_aligned & ~self.partial[:, i]).sum()) for i in range(self.k)],
            "usable": self.usable_counts(),
            "masked_positions": [int(mask.sum()) for mask in self.missing_masks],
            "split": self.split.to_dict() if self.split else None,
            "mask_checksum": self.checksum(),
        }


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

@dataclass
class TabularEncoder:
    """
    Fitted preprocessing: min-max for continuous columns, one-hot for
    categorical ones. Output columns: continuous first, then one-hot blocks.
    """
    continuous_columns: List[str]
    categorical_columns: List[str]
    label_column: str
    classes: List[Any] = field(default_factory=list)
    scaler: Optional[MinMaxScaler] = None
    onehot: Optional[OneHotEncoder] = None

    def fit(self, frame: pd.DataFrame) -> "TabularEncoder":
        if self.continuous_columns:
            self.scaler = MinMaxScaler().fit(_numeric(frame, self.continuous_columns))
        if self.categorical_columns:
            self.onehot = OneHotEncoder(handle_unknown="ignore", sparse_output=False, dtype=np.float64)
            self.onehot.fit(frame[self.categorical_columns].astype(str))
        self.classes = sorted(frame[self.label_column].unique().tolist())
        return self

    def transform(self, frame: pd.DataFrame) -> Tuple[DenseMatrix, np.ndarray]:
        parts = []
        if self.continuous_columns:
            parts.append(self.scaler.transform(_numeric(frame, self.continuous_columns)))
        if self.categorical_columns:
            values = frame[self.categorical_columns].astype(str)
            for index, column in enumerate(self.categorical_columns):
                known = set(self.onehot.categories_[index])
                unseen = sorted(set(values[column]) - known)
                if unseen:
                    logger.warning(f"Unseen categories in column '{column}' map to all-zero one-hot: {unseen}")
            parts.append(self.onehot.transform(values))
        if not parts:
            raise ValidationError("No feature columns to encode")
        features = np.concatenate(parts, axis=1).astype(np.float64)

        lookup = {value: index for index, value in enumerate(self.classes)}
        unknown_labels = set(frame[self.label_column]) - set(lookup)
        if unknown_labels:
            raise ValidationError(f"Labels not seen at fit time: {sorted(map(str, unknown_labels))}")
        labels = frame[self.label_column].map(lookup).to_numpy(dtype=np.int64)
        return features, labels

    def inverse_continuous(self, features: DenseMatrix) -> DenseMatrix:
        """De-normalize the continuous columns with the stored (min, max)"""
        width = len(self.continuous_columns)
        return self.scaler.inverse_transform(features[:, :width])


def _numeric(frame: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
    try:
        values = frame[list(columns)].apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as e:
        raise ValidationError(f"Non-numeric cell in a continuous column: {e}")
    blank = np.argwhere(np.isnan(values))
    if blank.size:
        row, column = blank[0]
        raise ValidationError(
            f"Empty cell in continuous column '{columns[column]}' at row {frame.index[row]} "
            f"({len(blank)} empty cells in total)"
        )
    return values


def read_frame(path: str, label_column: str) -> pd.DataFrame:
    csv_path = Path(path)
    if not csv_path.exists():
        raise FileNotFoundError(f"CSV file not found: {csv_path}")
    frame = pd.read_csv(csv_path)
    if label_column not in frame.columns:
        raise ValidationError(f"Label column '{label_column}' not in {csv_path}")
    return frame


def load_csv(
    path: str,
    label_column: str,
    categorical_columns: Sequence[str] = (),
    encoder: Optional[TabularEncoder] = None
) -> Tuple[DenseMatrix, np.ndarray, TabularEncoder]:
    """
    Load and preprocess a CSV with a header row

    Args:
        path: CSV file
        label_column: Name of the class column
        categorical_columns: Columns to one-hot encode; the rest are continuous
        encoder: Encoder fitted on the training split; fitted here when None

    Returns:
        (features, labels, encoder); row order preserved
    """
    frame = read_frame(path, label_column)
    missing = [c for c in categorical_columns if c not in frame.columns]
    if missing:
        raise ValidationError(f"Categorical columns not in CSV: {missing}")

    if encoder is None:
        continuous = [c for c in frame.columns if c != label_column and c not in categorical_columns]
        encoder = TabularEncoder(
            continuous_columns=continuous,
            categorical_columns=list(categorical_columns),
            label_column=label_column,
        ).fit(frame)
        logger.info(f"Fitted encoder on {path}: {len(continuous)} continuous, {len(categorical_columns)} categorical")

    features, labels = encoder.transform(frame)
    return features, labels, encoder


def generate_synthetic(
    n: int,
    m: int,
    n_classes: int,
    seed: int,
    separation: float = DATA.SEPARATION
) -> Tuple[DenseMatrix, np.ndarray]:
    """
    Class-conditional unit-variance Gaussian blobs

    Each coordinate orders the class means by an independent random
    permutation, spaced so two classes differ by at least
    separation * sqrt(2 / m) per coordinate. Two classes are therefore
    separation * sqrt(2) apart over all m features.
    """
    if min(n, m, n_classes) < 1:
        raise ValidationError(f"n, m and n_classes must be >= 1, got {(n, m, n_classes)}")
    rng = named_rng(seed, "synthetic")
    ranks = np.stack([rng.permutation(n_classes) for _ in range(m)], axis=1).astype(np.float64)
    unit = separation * np.sqrt(2.0 / m)
    means = unit * (ranks - (n_classes - 1) / 2.0)
    labels = rng.permutation(np.arange(n) % n_classes)
    features = means[labels] + rng.standard_normal((n, m))
    return features, labels.astype(np.int64)


def train_test_split(
    features: DenseMatrix,
    labels: np.ndarray,
    test_fraction: float,
    seed: int
) -> Tuple[DenseMatrix, np.ndarray, DenseMatrix, np.ndarray]:
    """Seeded split; returns (train_x, train_y, test_x, test_y)"""
    train_x, test_x, train_y, test_y = sk_train_test_split(
        features, labels, test_size=test_fraction, random_state=seed
    )
    return train_x, train_y, test_x, test_y


def minmax_normalize(train: DenseMatrix, *others: DenseMatrix) -> List[DenseMatrix]:
    """Scale to [0, 1] with training statistics"""
    scaler = MinMaxScaler().fit(train)
    return [scaler.transform(train)] + [scaler.transform(other) for other in others]


# ---------------------------------------------------------------------------
# Vertical structure
# ---------------------------------------------------------------------------

def partition_dims(m: int, k: int, fractions: Optional[Sequence[float]] = None) -> List[int]:
    """dᵢ = round(fractionᵢ·m) for all but the last client, which takes the remainder"""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if k > m:
        raise ValidationError(f"Cannot split {m} features across {k} clients")
    if fractions is None:
        fractions = [1.0 / k] * k
    if len(fractions) != k:
        raise ValidationError(f"Need {k} fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"Feature fractions must sum to 1, got {sum(fractions)}")

    dims = [int(round(f * m)) for f in fractions[:-1]]
    dims.append(m - sum(dims))
    if any(d < 1 for d in dims):
        raise ValidationError(f"Every client needs at least one feature, got dims {dims}")
    return dims


def partition_vertical(
    features: DenseMatrix,
    k: int,
    fractions: Optional[Sequence[float]] = None
) -> List[DenseMatrix]:
    """Contiguous column ranges in client order"""
    dims = partition_dims(features.shape[1], k, fractions)
    bounds = np.cumsum([0] + dims)
    return [features[:, bounds[i]:bounds[i + 1]].copy() for i in range(k)]


def split_alignment(n: int, overlap_ratio: float, seed: int, k: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """
    Flag ⌊overlap_ratio·n⌋ aligned samples

    Non-aligned samples are handed round-robin to "full at client j" patterns
    (every other client partial).

    Returns:
        (aligned[n], partial[n, k])
    """
    if not 0.0 <= overlap_ratio <= 1.0:
        raise ValidationError(f"overlap_ratio must be in [0, 1], got {overlap_ratio}")
    n_aligned = int(np.floor(overlap_ratio * n + 1e-9))
    order = named_rng(seed, "alignment").permutation(n)

    aligned = np.zeros(n, dtype=bool)
    aligned[order[:n_aligned]] = True
    partial = np.zeros((n, k), dtype=bool)
    if k > 1:
        for position, sample in enumerate(order[n_aligned:]):
            partial[sample, :] = True
            partial[sample, position % k] = False
    else:
        aligned[:] = True
    return aligned, partial


def masked_count(missing_rate: float, dim: int) -> int:
    """Positions masked per (sample, partial client)"""
    return int(round(missing_rate * dim))


def apply_missing(dataset: VerticalDataset, missing_rate: float, seed: int) -> VerticalDataset:
    """
    Mask round(R_miss·dᵢ) positions per non-aligned sample and partial client

    Positions are uniform per sample; masked entries become the sentinel.
    """
    if not 0.0 <= missing_rate <= 1.0:
        raise ValidationError(f"missing_rate must be in [0, 1], got {missing_rate}")
    if dataset.has_masks():
        raise ValidationError("Dataset is already masked")

    rng = named_rng(seed, "missing")
    blocks, masks = [], []
    for i, block in enumerate(dataset.blocks):
        dim = block.shape[1]
        mask = np.zeros(block.shape, dtype=bool)
        rows = np.flatnonzero(~dataset.aligned & dataset.partial[:, i])
        count = masked_count(missing_rate, dim)
        if count and rows.size:
            order = np.argsort(rng.random((rows.size, dim)), axis=1)[:, :count]
            mask[rows[:, None], order] = True
        masked_block = block.copy()
        masked_block[mask] = DATA.SENTINEL
        blocks.append(masked_block)
        masks.append(mask)
        logger.debug(f"Client {i}: masked {count} of {dim} features on {rows.size} samples")

    return VerticalDataset(
        labels=dataset.labels,
        blocks=blocks,
        aligned=dataset.aligned,
        partial=dataset.partial,
        missing_masks=masks,
        n_classes=dataset.n_classes,
        split=dataset.split,
    )


def split_imbalance(dataset: VerticalDataset, fractions: Sequence[float], seed: int) -> VerticalDataset:
    """
    Reassign non-aligned samples so client i holds fractionᵢ of all holdings

    Holdings count every (client, usable sample) pair: the aligned samples are
    held by everyone and each non-aligned sample by its single full client, so
    the total is n + (k−1)·aligned and Σ usableᵢ − (k−1)·aligned = n.
    """
    k, n = dataset.k, dataset.n_samples
    if len(fractions) != k:
        raise ValidationError(f"Need {k} imbalance fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ValidationError(f"Imbalance fractions must be positive and sum to 1, got {list(fractions)}")
    if dataset.has_masks():
        raise ValidationError("Apply the imbalance split before masking")

    n_aligned = int(dataset.aligned.sum())
    total = n + (k - 1) * n_aligned
    own = [int(round(f * total)) - n_aligned for f in fractions[:-1]]
    own.append((n - n_aligned) - sum(own))
    if any(count < 0 for count in own):
        raise ValidationError(
            f"Fractions {list(fractions)} are infeasible with {n_aligned} aligned of {n} samples"
        )

    non_aligned = named_rng(seed, "imbalance").permutation(np.flatnonzero(~dataset.aligned))
    partial = np.zeros((n, k), dtype=bool)
    start = 0
    for client, count in enumerate(own):
        rows = non_aligned[start:start + count]
        partial[rows, :] = True
        partial[rows, client] = False
        start += count

    logger.info(f"Imbalance split {list(fractions)}: usable per client {[n_aligned + c for c in own]}")
    return VerticalDataset(
        labels=dataset.labels,
        blocks=dataset.blocks,
        aligned=dataset.aligned,
        partial=partial,
        missing_masks=dataset.missing_masks,
        n_classes=dataset.n_classes,
        split=dataset.split,
    )


def build_vertical_dataset(
    features: DenseMatrix,
    labels: np.ndarray,
    k: int,
    split: SplitSpec,
    n_classes: Optional[int] = None,
    feature_fractions: Optional[Sequence[float]] = None
) -> VerticalDataset:
    """Partition, align, optionally rebalance ownership, then mask"""
    split.validate()
    labels = np.asarray(labels, dtype=np.int64)
    blocks = partition_vertical(features, k, feature_fractions)
    aligned, partial = split_alignment(labels.shape[0], split.overlap_ratio, split.seed, k)

    dataset = VerticalDataset(
        labels=labels,
        blocks=blocks,
        aligned=aligned,
        partial=partial,
        missing_masks=[np.zeros(block.shape, dtype=bool) for block in blocks],
        n_classes=n_classes if n_classes is not None else int(labels.max()) + 1,
        split=split,
    )
    if split.imbalance is not None:
        dataset = split_imbalance(dataset, split.imbalance, split.seed)
    dataset = apply_missing(dataset, split.missing_rate, split.seed)
    return dataset.validate()
