#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Baseline Models

Vanilla Standalone: one bottom + top per client, trained on that client's
full-feature rows only. Vanilla VFL: per-client bottoms whose embeddings are
concatenated into a top model of width k·e, trained on aligned rows only.
Both expose the same independent / collaborative prediction surface as the
X-VFL bundle.
"""

import logging
from typing import List, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError, ValidationError
from .dataset import VerticalDataset
from .models import ModelConfig
from .numkit import DenseMatrix, FeedForward, named_rng, softmax_cross_entropy
from .objectives import StochasticObjective
from .optim import Batch, OptimizerSpec, RngStreams, run_optimizer

logger = logging.getLogger(__name__)


def _flatten(networks: Sequence[FeedForward]) -> np.ndarray:
    return np.concatenate([net.flatten() for net in networks])


def _load(networks: Sequence[FeedForward], theta: np.ndarray) -> None:
    offset = 0
    for net in networks:
        net.load_flat(theta[offset:offset + net.n_params])
        offset += net.n_params


class _ClientObjective(StochasticObjective):
    """Cross-entropy of top(bottom(x)) over one client's rows"""

    def __init__(self, bottom: FeedForward, top: FeedForward, block: DenseMatrix, labels: np.ndarray):
        self.networks = [bottom, top]
        self.block = block
        self.labels = labels
        self._theta0 = _flatten(self.networks)

    @property
    def n_params(self) -> int:
        return sum(net.n_params for net in self.networks)

    @property
    def n_samples(self) -> int:
        return self.block.shape[0]

    def initial_theta(self) -> np.ndarray:
        return self._theta0.copy()

    def _run(self, theta: np.ndarray, batch: Batch, need_grad: bool):
        _load(self.networks, theta)
        bottom, top = self.networks
        embeddings, bottom_cache = bottom.forward(self.block[batch.indices])
        logits, top_cache = top.forward(embeddings)
        loss, d_logits = softmax_cross_entropy(logits, self.labels[batch.indices])
        if not need_grad:
            return loss, None
        d_embeddings, top_grads = top.backward(d_logits, top_cache)
        _, bottom_grads = bottom.backward(d_embeddings, bottom_cache)
        grad = np.concatenate([g.ravel() for g in bottom_grads + top_grads])
        return loss, grad

    def loss(self, theta: np.ndarray, batch: Batch) -> float:
        return self._run(theta, batch, need_grad=False)[0]

    def grad(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        return self._run(theta, batch, need_grad=True)[1]


class _ConcatObjective(StochasticObjective):
    """Cross-entropy of top([f₁(x₁), …, f_k(x_k)]) over aligned rows"""

    def __init__(self, bottoms: List[FeedForward], top: FeedForward, blocks: List[DenseMatrix], labels: np.ndarray):
        self.networks = list(bottoms) + [top]
        self.blocks = blocks
        self.labels = labels
        self._theta0 = _flatten(self.networks)

    @property
    def n_params(self) -> int:
        return sum(net.n_params for net in self.networks)

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    def initial_theta(self) -> np.ndarray:
        return self._theta0.copy()

    def _run(self, theta: np.ndarray, batch: Batch, need_grad: bool):
        _load(self.networks, theta)
        bottoms, top = self.networks[:-1], self.networks[-1]
        outputs = [bottom.forward(block[batch.indices]) for bottom, block in zip(bottoms, self.blocks)]
        joined = np.concatenate([values for values, _ in outputs], axis=1)
        logits, top_cache = top.forward(joined)
        loss, d_logits = softmax_cross_entropy(logits, self.labels[batch.indices])
        if not need_grad:
            return loss, None
        d_joined, top_grads = top.backward(d_logits, top_cache)
        e = outputs[0][0].shape[1]
        chunks = []
        for i, (bottom, (_, cache)) in enumerate(zip(bottoms, outputs)):
            _, grads = bottom.backward(d_joined[:, i * e:(i + 1) * e], cache)
            chunks.extend(g.ravel() for g in grads)
        chunks.extend(g.ravel() for g in top_grads)
        return loss, np.concatenate(chunks)

    def loss(self, theta: np.ndarray, batch: Batch) -> float:
        return self._run(theta, batch, need_grad=False)[0]

    def grad(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        return self._run(theta, batch, need_grad=True)[1]


class StandaloneModel:
    """k independent (bottom, top) pairs"""

    kind = "standalone"

    def __init__(self, bottoms: List[FeedForward], tops: List[FeedForward]):
        self.bottoms = bottoms
        self.tops = tops

    @property
    def k(self) -> int:
        return len(self.bottoms)

    def logits_independent(self, i: int, block: DenseMatrix) -> DenseMatrix:
        if block.ndim != 2 or block.shape[1] != self.bottoms[i].d_in:
            raise DimensionError(f"standalone client {i}", block.shape, ("n", self.bottoms[i].d_in))
        embeddings, _ = self.bottoms[i].forward(block)
        return self.tops[i].forward(embeddings)[0]

    def logits_collaborative(self, blocks: Sequence[DenseMatrix]) -> DenseMatrix:
        """Mean of the per-client logits"""
        return np.mean(np.stack([self.logits_independent(i, b) for i, b in enumerate(blocks)]), axis=0)

    def predict_independent(self, i: int, block: DenseMatrix) -> np.ndarray:
        return np.argmax(self.logits_independent(i, block), axis=1)

    def predict_collaborative(self, blocks: Sequence[DenseMatrix]) -> np.ndarray:
        return np.argmax(self.logits_collaborative(blocks), axis=1)


class VanillaVFLModel:
    """k bottoms feeding one top model over the concatenated embeddings"""

    kind = "vanilla_vfl"

    def __init__(self, bottoms: List[FeedForward], top: FeedForward):
        self.bottoms = bottoms
        self.top = top
        width = sum(bottom.d_out for bottom in bottoms)
        if top.d_in != width:
            raise DimensionError("vanilla VFL top input", (top.d_in,), (width,))

    @property
    def k(self) -> int:
        return len(self.bottoms)

    @property
    def embed_dim(self) -> int:
        return self.bottoms[0].d_out

    def _embed(self, i: int, block: DenseMatrix) -> DenseMatrix:
        if block.ndim != 2 or block.shape[1] != self.bottoms[i].d_in:
            raise DimensionError(f"vanilla VFL client {i}", block.shape, ("n", self.bottoms[i].d_in))
        return self.bottoms[i].forward(block)[0]

    def logits_independent(self, i: int, block: DenseMatrix) -> DenseMatrix:
        """Client i's embedding with every other client's slot zeroed"""
        e = self.embed_dim
        joined = np.zeros((block.shape[0], self.k * e))
        joined[:, i * e:(i + 1) * e] = self._embed(i, block)
        return self.top.forward(joined)[0]

    def logits_collaborative(self, blocks: Sequence[DenseMatrix]) -> DenseMatrix:
        """Concatenation of all embeddings; masked positions stay at the sentinel"""
        joined = np.concatenate([self._embed(i, block) for i, block in enumerate(blocks)], axis=1)
        return self.top.forward(joined)[0]

    def predict_independent(self, i: int, block: DenseMatrix) -> np.ndarray:
        return np.argmax(self.logits_independent(i, block), axis=1)

    def predict_collaborative(self, blocks: Sequence[DenseMatrix]) -> np.ndarray:
        return np.argmax(self.logits_collaborative(blocks), axis=1)


def _networks(dims: Sequence[int], top_in: int, n_classes: int, config: ModelConfig, rng: np.random.Generator):
    e = config.embed_dim
    bottoms = [FeedForward([d, *config.bottom_hidden, e], rng, name=f"bottom{i}") for i, d in enumerate(dims)]
    top = FeedForward([top_in, *config.top_hidden, n_classes], rng, name="top")
    return bottoms, top


def train_standalone(
    dataset: VerticalDataset,
    config: ModelConfig,
    optimizer: OptimizerSpec,
    T: int,
    seed: int
) -> StandaloneModel:
    """Client i trains on the rows where it holds its full slice"""
    rng = named_rng(seed, "init")
    bottoms, tops = [], []
    for i, d in enumerate(dataset.client_dims):
        bottom, top = _networks([d], config.embed_dim, dataset.n_classes, config, rng)
        bottom = bottom[0]
        rows = np.flatnonzero(dataset.full[:, i])
        if rows.size == 0:
            raise ValidationError(f"Client {i} has no full-feature rows to train on")
        objective = _ClientObjective(bottom, top, dataset.blocks[i][rows], dataset.labels[rows])
        theta, _ = run_optimizer(objective, objective.initial_theta(), optimizer, T, RngStreams(seed * 1009 + i))
        _load(objective.networks, theta)
        bottoms.append(bottom)
        tops.append(top)
        logger.debug(f"Standalone client {i} trained on {rows.size} rows")
    return StandaloneModel(bottoms, tops)


def train_vanilla_vfl(
    dataset: VerticalDataset,
    config: ModelConfig,
    optimizer: OptimizerSpec,
    T: int,
    seed: int
) -> VanillaVFLModel:
    """Concatenated-embedding VFL trained on aligned rows only"""
    rows = np.flatnonzero(dataset.aligned)
    if rows.size == 0:
        raise ValidationError("Vanilla VFL needs at least one aligned sample")
    bottoms, top = _networks(
        dataset.client_dims, dataset.k * config.embed_dim, dataset.n_classes, config, named_rng(seed, "init")
    )
    objective = _ConcatObjective(bottoms, top, [block[rows] for block in dataset.blocks], dataset.labels[rows])
    theta, _ = run_optimizer(objective, objective.initial_theta(), optimizer, T, RngStreams(seed))
    _load(objective.networks, theta)
    logger.debug(f"Vanilla VFL trained on {rows.size} aligned rows")
    return VanillaVFLModel(bottoms, top)


def baseline_train(
    kind: str,
    dataset: VerticalDataset,
    config: ModelConfig,
    optimizer: OptimizerSpec,
    T: int,
    seed: int
):
    """
    Train a baseline

    Args:
        kind: 'standalone' or 'vanilla_vfl'

    Raises:
        ConfigError: Unknown kind
    """
    if kind == "standalone":
        return train_standalone(dataset, config, optimizer, T, seed)
    if kind == "vanilla_vfl":
        return train_vanilla_vfl(dataset, config, optimizer, T, seed)
    raise ConfigError(f"Unknown baseline kind: {kind!r}")
