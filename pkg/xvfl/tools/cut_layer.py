#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Cut-Layer Exchange

One round of the split computation. Clients embed their full-feature rows,
the server averages source embeddings for each completer, clients
reconstruct and re-embed, and the backward pass routes cut-layer gradients
back to every network that produced an embedding.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import ConfigError
from .dataset import VerticalDataset
from .message_ledger import SERVER, MessageLedger, PayloadKind, client_node
from .models import EmbeddingSet, ModelBundle, bottom_forward, merge_partial, xcom_complete
from .numkit import DenseMatrix, LayerCache

logger = logging.getLogger(__name__)


class GradientBuffer:
    """
    Per-network gradient accumulator in flat-θ order

    Network index: bottoms 0..k-1, completers k..2k-1, top 2k.
    """

    def __init__(self, bundle: ModelBundle):
        self.k = bundle.k
        self.parts = [net.zero_grads() for net in bundle.networks()]

    def add(self, network_index: int, grads: List[np.ndarray]) -> None:
        for accumulated, grad in zip(self.parts[network_index], grads):
            accumulated += grad

    def add_bottom(self, i: int, grads: List[np.ndarray]) -> None:
        self.add(i, grads)

    def add_xcom(self, i: int, grads: List[np.ndarray]) -> None:
        self.add(self.k + i, grads)

    def add_top(self, grads: List[np.ndarray]) -> None:
        self.add(2 * self.k, grads)

    def flatten(self) -> np.ndarray:
        chunks = [g.ravel() for part in self.parts for g in part]
        return np.concatenate(chunks) if chunks else np.zeros(0)


@dataclass
class ReconstructionPath:
    """Caches of XCom -> merge -> bottom for one client over its rows"""
    rows: np.ndarray
    mask: np.ndarray
    xcom_cache: LayerCache
    bottom_cache: LayerCache
    source_weights: Optional[np.ndarray] = None  # rows x k, cross-sourced only
    raw_cache: Optional[LayerCache] = None  # self-sourced only


@dataclass
class RoundState:
    """Everything the backward pass needs from one forward round"""
    batch: VerticalDataset
    embeddings: EmbeddingSet
    round_index: int
    embedding_rows: List[np.ndarray]
    embedding_caches: List[Optional[LayerCache]]
    reconstructions: List[Optional[ReconstructionPath]]
    self_reconstructions: List[Optional[ReconstructionPath]] = field(default_factory=list)

    def caches(self) -> List[LayerCache]:
        found = [cache for cache in self.embedding_caches if cache is not None]
        for path in list(self.reconstructions) + list(self.self_reconstructions):
            if path is not None:
                found.extend([path.xcom_cache, path.bottom_cache])
                if path.raw_cache is not None:
                    found.append(path.raw_cache)
        return found


def reconstruction_rows(batch: VerticalDataset, i: int) -> np.ndarray:
    """Rows that carry a cross-sourced Ẽᵢ: aligned rows and rows where i is partial"""
    return np.flatnonzero(batch.aligned | batch.partial[:, i])


def source_weights(batch: VerticalDataset, i: int, rows: np.ndarray) -> np.ndarray:
    """
    Coefficients of each Eⱼ in client i's XCom source

    Aligned rows average the other k−1 clients; non-aligned rows average the
    full clients M of the sample.
    """
    k = batch.k
    full = batch.full[rows]
    weights = np.zeros((rows.size, k))
    aligned = batch.aligned[rows]

    others = np.ones(k, dtype=bool)
    others[i] = False
    weights[aligned] = others / (k - 1)

    non_aligned = ~aligned
    if np.any(non_aligned):
        counts = full[non_aligned].sum(axis=1)
        if np.any(counts == 0):
            raise ConfigError("A non-aligned sample has no full-feature client to source reconstructions from")
        weights[non_aligned] = full[non_aligned] / counts[:, None]
    return weights


def forward_round(
    bundle: ModelBundle,
    batch: VerticalDataset,
    self_input: bool = False,
    ledger: Optional[MessageLedger] = None,
    round_index: int = 0
) -> RoundState:
    """
    Compute Eᵢ for full clients, cross-sourced Ẽᵢ, and optionally self-sourced Ẽᵢ

    Aligned rows adopt the completer output entirely (all-true merge mask) so
    the reconstruction can be compared with the existing embedding; partial
    rows adopt it only at their masked positions.
    """
    k, n, e = bundle.k, batch.n_samples, bundle.embed_dim
    if batch.client_dims != bundle.client_dims:
        raise ConfigError(f"Batch dims {batch.client_dims} do not match model dims {bundle.client_dims}")

    full = batch.full
    embeddings, embedding_rows, embedding_caches = [], [], []
    for i in range(k):
        rows = np.flatnonzero(full[:, i])
        matrix = np.zeros((n, e))
        cache = None
        if rows.size:
            values, cache = bottom_forward(bundle, i, batch.blocks[i][rows])
            matrix[rows] = values
            if ledger is not None:
                ledger.record_local(round_index, i, PayloadKind.RAW_FEATURES, batch.blocks[i][rows])
                ledger.send(round_index, client_node(i), SERVER, PayloadKind.EMBEDDING, values)
        embeddings.append(matrix)
        embedding_rows.append(rows)
        embedding_caches.append(cache)

    reconstructed: List[Optional[DenseMatrix]] = [None] * k
    reconstructed_available = np.zeros((n, k), dtype=bool)
    reconstructions: List[Optional[ReconstructionPath]] = [None] * k
    if k > 1:
        for i in range(k):
            rows = reconstruction_rows(batch, i)
            if rows.size == 0:
                continue
            weights = source_weights(batch, i, rows)
            source = np.zeros((rows.size, e))
            for j in range(k):
                if np.any(weights[:, j]):
                    source += weights[:, j:j + 1] * embeddings[j][rows]
            if ledger is not None:
                ledger.send(round_index, SERVER, client_node(i), PayloadKind.XCOM_SOURCE, source)

            completed, xcom_cache = xcom_complete(bundle, i, source)
            mask = batch.missing_masks[i][rows] | batch.aligned[rows][:, None]
            merged = merge_partial(batch.blocks[i][rows], completed, mask)
            if ledger is not None:
                ledger.record_local(round_index, i, PayloadKind.RECONSTRUCTED_FEATURES, merged)
            values, bottom_cache = bottom_forward(bundle, i, merged)

            matrix = np.zeros((n, e))
            matrix[rows] = values
            reconstructed[i] = matrix
            reconstructed_available[rows, i] = True
            reconstructions[i] = ReconstructionPath(rows, mask, xcom_cache, bottom_cache, source_weights=weights)
            if ledger is not None:
                ledger.send(round_index, client_node(i), SERVER, PayloadKind.RECONSTRUCTED_EMBEDDING, values)

    self_reconstructed: List[Optional[DenseMatrix]] = [None] * k
    self_available = np.zeros((n, k), dtype=bool)
    self_paths: List[Optional[ReconstructionPath]] = [None] * k
    if self_input:
        for i in range(k):
            rows = np.flatnonzero(~batch.aligned & batch.partial[:, i])
            if rows.size == 0:
                continue
            block = batch.blocks[i][rows]
            raw, raw_cache = bottom_forward(bundle, i, block)
            completed, xcom_cache = xcom_complete(bundle, i, raw)
            mask = batch.missing_masks[i][rows]
            merged = merge_partial(block, completed, mask)
            if ledger is not None:
                ledger.record_local(round_index, i, PayloadKind.RAW_FEATURES, block)
                ledger.record_local(round_index, i, PayloadKind.RECONSTRUCTED_FEATURES, merged)
            values, bottom_cache = bottom_forward(bundle, i, merged)

            matrix = np.zeros((n, e))
            matrix[rows] = values
            self_reconstructed[i] = matrix
            self_available[rows, i] = True
            self_paths[i] = ReconstructionPath(rows, mask, xcom_cache, bottom_cache, raw_cache=raw_cache)
            if ledger is not None:
                ledger.send(round_index, client_node(i), SERVER, PayloadKind.SELF_RECONSTRUCTED_EMBEDDING, values)

    available = np.zeros((n, k), dtype=bool)
    for i, rows in enumerate(embedding_rows):
        available[rows, i] = True

    embedding_set = EmbeddingSet(
        embeddings=embeddings,
        reconstructed=reconstructed,
        available=available,
        reconstructed_available=reconstructed_available,
        self_reconstructed=self_reconstructed,
        self_available=self_available,
    )
    return RoundState(
        batch=batch,
        embeddings=embedding_set,
        round_index=round_index,
        embedding_rows=embedding_rows,
        embedding_caches=embedding_caches,
        reconstructions=reconstructions,
        self_reconstructions=self_paths,
    )


def _backprop_completion(
    bundle: ModelBundle,
    i: int,
    path: ReconstructionPath,
    upstream: DenseMatrix,
    buffer: GradientBuffer
) -> DenseMatrix:
    """Through bottom(merged) -> merge -> XCom; returns the gradient w.r.t. the XCom input"""
    d_merged, grads = bundle.bottoms[i].backward(upstream, path.bottom_cache)
    buffer.add_bottom(i, grads)
    d_completed = np.where(path.mask, d_merged, 0.0)
    d_source, grads = bundle.xcoms[i].backward(d_completed, path.xcom_cache)
    buffer.add_xcom(i, grads)
    return d_source


def backward_round(
    bundle: ModelBundle,
    state: RoundState,
    d_embeddings: List[DenseMatrix],
    d_reconstructed: List[Optional[DenseMatrix]],
    d_self: Optional[List[Optional[DenseMatrix]]] = None,
    buffer: Optional[GradientBuffer] = None,
    ledger: Optional[MessageLedger] = None
) -> GradientBuffer:
    """
    Route cut-layer gradients to bottoms and completers

    Reconstruction paths run first because they add gradient onto the source
    embeddings Eⱼ; each bottom is then backpropagated once over its rows.
    """
    k = bundle.k
    buffer = buffer or GradientBuffer(bundle)
    d_embeddings = [g.copy() for g in d_embeddings]
    t = state.round_index

    if d_self is not None:
        for i, path in enumerate(state.self_reconstructions):
            if path is None or d_self[i] is None:
                continue
            upstream = d_self[i][path.rows]
            if ledger is not None:
                ledger.send(t, SERVER, client_node(i), PayloadKind.RECONSTRUCTED_GRADIENT, upstream)
            d_raw = _backprop_completion(bundle, i, path, upstream, buffer)
            _, grads = bundle.bottoms[i].backward(d_raw, path.raw_cache)
            buffer.add_bottom(i, grads)

    for i, path in enumerate(state.reconstructions):
        if path is None or d_reconstructed[i] is None:
            continue
        upstream = d_reconstructed[i][path.rows]
        if ledger is not None:
            ledger.send(t, SERVER, client_node(i), PayloadKind.RECONSTRUCTED_GRADIENT, upstream)
        d_source = _backprop_completion(bundle, i, path, upstream, buffer)
        if ledger is not None:
            ledger.send(t, client_node(i), SERVER, PayloadKind.SOURCE_GRADIENT, d_source)
        for j in range(k):
            column = path.source_weights[:, j:j + 1]
            if np.any(column):
                d_embeddings[j][path.rows] += column * d_source

    for i in range(k):
        rows, cache = state.embedding_rows[i], state.embedding_caches[i]
        if cache is None:
            continue
        upstream = d_embeddings[i][rows]
        if ledger is not None:
            ledger.send(t, SERVER, client_node(i), PayloadKind.EMBEDDING_GRADIENT, upstream)
        _, grads = bundle.bottoms[i].backward(upstream, cache)
        buffer.add_bottom(i, grads)

    return buffer
