#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Inference Modes

independent: one client, own features, own bottom + shared top.
independent_with_missing: one client completes its masked positions with its
own completer fed by its own sentinel-filled embedding.
collaborative: full clients send Eᵢ, partial clients send Ẽᵢ completed from
the mean embedding of the sample's full clients; predictions come from the
mean of everything sent.

All modes are read-only over θ.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from ..config import DATA
from ..errors import DimensionError, ValidationError
from .models import ModelBundle, bottom_forward, merge_partial, top_forward, xcom_complete
from .numkit import DenseMatrix

logger = logging.getLogger(__name__)

MODES = ("independent", "independent_with_missing", "collaborative")


@dataclass
class InferenceRequest:
    """What to predict and how"""
    mode: str
    blocks: List[DenseMatrix]
    masks: Optional[List[np.ndarray]] = None
    client: Optional[int] = None

    def validate(self) -> "InferenceRequest":
        if self.mode not in MODES:
            raise ValidationError(f"Unknown inference mode: {self.mode!r}")
        if self.mode != "collaborative":
            if self.client is None:
                raise ValidationError(f"Mode {self.mode} needs a client index")
            if len(self.blocks) != 1:
                raise ValidationError(f"Mode {self.mode} takes exactly one feature block")
        if self.masks is not None and len(self.masks) != len(self.blocks):
            raise ValidationError("One mask per feature block is required")
        return self


def _no_mask(block: DenseMatrix) -> np.ndarray:
    return np.zeros(block.shape, dtype=bool)


def _check_block(bundle: ModelBundle, i: int, block: DenseMatrix, mask: Optional[np.ndarray] = None) -> None:
    if not 0 <= i < bundle.k:
        raise ValidationError(f"Client index {i} out of range for k={bundle.k}")
    expected = bundle.bottoms[i].d_in
    if block.ndim != 2 or block.shape[1] != expected:
        raise DimensionError(f"client {i} block", block.shape, ("n", expected))
    if mask is not None and mask.shape != block.shape:
        raise DimensionError(f"client {i} mask", mask.shape, block.shape)


# ---------------------------------------------------------------------------
# Logits
# ---------------------------------------------------------------------------

def logits_independent(bundle: ModelBundle, i: int, block: DenseMatrix) -> DenseMatrix:
    """h(fᵢ(xᵢ)); touches only bottom i and the top model"""
    _check_block(bundle, i, block)
    embeddings, _ = bottom_forward(bundle, i, block)
    return top_forward(bundle, embeddings)[0]


def _self_completed_embeddings(bundle: ModelBundle, i: int, block: DenseMatrix, mask: np.ndarray) -> DenseMatrix:
    source, _ = bottom_forward(bundle, i, block)
    completed, _ = xcom_complete(bundle, i, source)
    merged = merge_partial(block, completed, mask)
    return bottom_forward(bundle, i, merged)[0]


def logits_independent_with_missing(bundle: ModelBundle, i: int, block: DenseMatrix, mask: np.ndarray) -> DenseMatrix:
    """h(fᵢ(merge(xᵢ, XComᵢ(fᵢ(xᵢ)), mask)))"""
    _check_block(bundle, i, block, mask)
    embeddings = _self_completed_embeddings(bundle, i, block, mask)
    return top_forward(bundle, embeddings)[0]


def logits_collaborative(
    bundle: ModelBundle,
    blocks: Sequence[DenseMatrix],
    masks: Optional[Sequence[np.ndarray]] = None
) -> DenseMatrix:
    """
    h(mean of contributed embeddings)

    A client is full for a sample when none of its positions is masked.
    Samples without any full client fall back to self-sourced completion for
    every client.

    Raises:
        ValidationError: A sample where every client is fully masked
    """
    k = bundle.k
    if len(blocks) != k:
        raise ValidationError(f"Collaborative inference needs {k} blocks, got {len(blocks)}")
    masks = list(masks) if masks is not None else [_no_mask(block) for block in blocks]
    for i in range(k):
        _check_block(bundle, i, blocks[i], masks[i])
    n = blocks[0].shape[0]
    if any(block.shape[0] != n for block in blocks):
        raise ValidationError("All blocks must have the same number of rows")

    empty = np.stack([mask.all(axis=1) for mask in masks], axis=1)
    if np.any(empty.all(axis=1)):
        raise ValidationError(f"{int(empty.all(axis=1).sum())} samples have no features at any client")

    full = np.stack([~mask.any(axis=1) for mask in masks], axis=1)
    counts = full.sum(axis=1)
    embeddings = [bottom_forward(bundle, i, blocks[i])[0] for i in range(k)]

    contributed = [np.where(full[:, i:i + 1], embeddings[i], 0.0) for i in range(k)]
    sourced = counts > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = np.where(sourced[:, None], full / np.maximum(counts, 1)[:, None], 0.0)
    for i in range(k):
        rows = np.flatnonzero(~full[:, i] & sourced)
        if rows.size:
            source = sum(weights[rows, j:j + 1] * embeddings[j][rows] for j in range(k) if np.any(weights[rows, j]))
            completed, _ = xcom_complete(bundle, i, source)
            merged = merge_partial(blocks[i][rows], completed, masks[i][rows])
            contributed[i][rows] = bottom_forward(bundle, i, merged)[0]
        lone = np.flatnonzero(~sourced)
        if lone.size:
            contributed[i][lone] = _self_completed_embeddings(bundle, i, blocks[i][lone], masks[i][lone])

    average = np.mean(np.stack(contributed, axis=0), axis=0)
    return top_forward(bundle, average)[0]


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------

def infer_independent(bundle: ModelBundle, i: int, block: DenseMatrix, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Mode 1

    Raises:
        ValidationError: The block has masked positions
    """
    if mask is not None and np.any(mask):
        raise ValidationError("Masked input in independent mode; use independent_with_missing")
    return np.argmax(logits_independent(bundle, i, block), axis=1)


def infer_independent_with_missing(bundle: ModelBundle, i: int, block: DenseMatrix, mask: np.ndarray) -> np.ndarray:
    """Mode 2"""
    return np.argmax(logits_independent_with_missing(bundle, i, block, mask), axis=1)


def infer_collaborative(
    bundle: ModelBundle,
    blocks: Sequence[DenseMatrix],
    masks: Optional[Sequence[np.ndarray]] = None
) -> np.ndarray:
    """Mode 3"""
    return np.argmax(logits_collaborative(bundle, blocks, masks), axis=1)


def infer_zero_fill(bundle: ModelBundle, i: int, block: DenseMatrix) -> np.ndarray:
    """Ablation: predict on the sentinel-filled block without completion"""
    return np.argmax(logits_independent(bundle, i, block), axis=1)


def run_request(bundle: ModelBundle, request: InferenceRequest) -> np.ndarray:
    request.validate()
    if request.mode == "collaborative":
        return infer_collaborative(bundle, request.blocks, request.masks)
    block = request.blocks[0]
    mask = request.masks[0] if request.masks is not None else _no_mask(block)
    if request.mode == "independent":
        return infer_independent(bundle, request.client, block, mask)
    return infer_independent_with_missing(bundle, request.client, block, mask)


def evaluate_accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    """
    Exact-match fraction

    Raises:
        ValidationError: Length mismatch or empty input
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape[0] != labels.shape[0]:
        raise ValidationError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if predictions.shape[0] == 0:
        raise ValidationError("Accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


# ---------------------------------------------------------------------------
# Batch inference over CSV
# ---------------------------------------------------------------------------

@dataclass
class CsvBlocks:
    blocks: List[DenseMatrix]
    masks: List[np.ndarray]
    row_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def read_blocks_csv(path: str, client_dims: Sequence[int]) -> CsvBlocks:
    """
    Read feature columns c{i}_f{j} and optional mask columns c{i}_m{j} (1 = absent)

    Clients whose feature columns are all missing from the file are treated
    as fully masked. Masked positions hold the sentinel.
    """
    csv_path = Path(path)
    if not csv_path.exists():
        raise FileNotFoundError(f"Input CSV not found: {csv_path}")
    frame = pd.read_csv(csv_path)
    blocks, masks = [], []
    for i, dim in enumerate(client_dims):
        feature_columns = [f"c{i}_f{j}" for j in range(dim)]
        mask_columns = [f"c{i}_m{j}" for j in range(dim)]
        present = [c in frame.columns for c in feature_columns]
        if any(present) and not all(present):
            missing = [c for c, p in zip(feature_columns, present) if not p]
            raise ValidationError(f"Client {i} is missing feature columns {missing}")
        if not any(present):
            block = np.full((len(frame), dim), DATA.SENTINEL)
            mask = np.ones((len(frame), dim), dtype=bool)
        else:
            block = frame[feature_columns].to_numpy(dtype=np.float64)
            if all(c in frame.columns for c in mask_columns):
                mask = frame[mask_columns].to_numpy() != 0
            else:
                mask = np.isnan(block)
            mask |= np.isnan(block)
            block = np.where(mask, DATA.SENTINEL, block)
        blocks.append(block)
        masks.append(mask)
    row_ids = frame["row_id"].to_numpy() if "row_id" in frame.columns else np.arange(len(frame))
    return CsvBlocks(blocks, masks, row_ids)


def predict_blocks_from_csv(bundle: ModelBundle, path: str, mode: str, client: int = 0) -> pd.DataFrame:
    """Predictions for every CSV row as a (row_id, prediction) frame"""
    data = read_blocks_csv(path, bundle.client_dims)
    if mode == "collaborative":
        request = InferenceRequest(mode, data.blocks, data.masks)
    else:
        request = InferenceRequest(mode, [data.blocks[client]], [data.masks[client]], client=client)
    predictions = run_request(bundle, request)
    logger.info(f"Predicted {predictions.shape[0]} rows from {path} in {mode} mode")
    return pd.DataFrame({"row_id": data.row_ids, "prediction": predictions.astype(np.int64)})
