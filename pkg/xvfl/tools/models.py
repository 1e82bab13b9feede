#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Network Roles

Bottom models f_i (d_i -> e), feature completers XCom_i (e -> d_i), the
shared top model h (e -> C), embedding averaging, partial-feature merging and
JSON checkpoints.
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..config import MODEL
from ..errors import DimensionError, ValidationError
from .numkit import DenseMatrix, FeedForward, LayerCache, named_rng

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "xvfl-checkpoint/1"


@dataclass
class ModelConfig:
    """Hidden widths per role; xcom_hidden=None means one hidden layer of width e"""
    embed_dim: int = MODEL.EMBED_DIM
    bottom_hidden: Tuple[int, ...] = MODEL.BOTTOM_HIDDEN
    top_hidden: Tuple[int, ...] = MODEL.TOP_HIDDEN
    xcom_hidden: Optional[Tuple[int, ...]] = None

    def xcom_widths(self) -> Tuple[int, ...]:
        if self.xcom_hidden is None:
            return (self.embed_dim,)
        return tuple(self.xcom_hidden)


class ModelBundle:
    """
    k bottoms, k completers and one top model behind a single flat θ

    Flat layout: bottoms in client order, then completers in client order,
    then the top model.
    """

    def __init__(
        self,
        bottoms: List[FeedForward],
        xcoms: List[FeedForward],
        top: FeedForward,
    ):
        self.bottoms = bottoms
        self.xcoms = xcoms
        self.top = top
        self.access_log: Set[str] = set()
        self._check_dims()

    def _check_dims(self):
        e = self.top.d_in
        for i, bottom in enumerate(self.bottoms):
            if bottom.d_out != e:
                raise DimensionError(f"bottom {i} output", (bottom.d_out,), (e,))
        for i, xcom in enumerate(self.xcoms):
            if xcom.d_in != e or xcom.d_out != self.bottoms[i].d_in:
                raise DimensionError(f"xcom {i}", (xcom.d_in, xcom.d_out), (e, self.bottoms[i].d_in))

    @property
    def k(self) -> int:
        return len(self.bottoms)

    @property
    def embed_dim(self) -> int:
        return self.top.d_in

    @property
    def n_classes(self) -> int:
        return self.top.d_out

    @property
    def client_dims(self) -> List[int]:
        return [bottom.d_in for bottom in self.bottoms]

    def networks(self) -> List[FeedForward]:
        return list(self.bottoms) + list(self.xcoms) + [self.top]

    # Access points used by forward passes; they feed the isolation audit.
    def bottom(self, i: int) -> FeedForward:
        self.access_log.add(f"bottom{i}")
        return self.bottoms[i]

    def xcom(self, i: int) -> FeedForward:
        self.access_log.add(f"xcom{i}")
        return self.xcoms[i]

    def top_model(self) -> FeedForward:
        self.access_log.add("top")
        return self.top

    @property
    def n_params(self) -> int:
        return sum(net.n_params for net in self.networks())

    def flatten(self) -> np.ndarray:
        return np.concatenate([net.flatten() for net in self.networks()])

    def load_flat(self, theta: np.ndarray) -> None:
        if theta.shape != (self.n_params,):
            raise DimensionError("ModelBundle.load_flat", theta.shape, (self.n_params,))
        offset = 0
        for net in self.networks():
            net.load_flat(theta[offset:offset + net.n_params])
            offset += net.n_params

    def copy(self) -> "ModelBundle":
        clone = copy.deepcopy(self)
        clone.access_log = set()
        return clone

    def shapes(self) -> Dict[str, Any]:
        return {
            "bottoms": [net.sizes for net in self.bottoms],
            "xcoms": [net.sizes for net in self.xcoms],
            "top": self.top.sizes,
        }


def build_bundle(client_dims: Sequence[int], n_classes: int, config: ModelConfig, seed: int) -> ModelBundle:
    """Fresh bundle with seeded uniform initialisation"""
    rng = named_rng(seed, "init")
    e = config.embed_dim
    bottoms = [
        FeedForward([d, *config.bottom_hidden, e], rng, name=f"bottom{i}")
        for i, d in enumerate(client_dims)
    ]
    xcoms = [
        FeedForward([e, *config.xcom_widths(), d], rng, name=f"xcom{i}")
        for i, d in enumerate(client_dims)
    ]
    top = FeedForward([e, *config.top_hidden, n_classes], rng, name="top")
    return ModelBundle(bottoms, xcoms, top)


@dataclass
class EmbeddingSet:
    """
    Per-client embeddings over one batch

    Matrices are n x e; rows whose availability flag is false hold zeros and
    are never read.
    """
    embeddings: List[DenseMatrix]
    reconstructed: List[Optional[DenseMatrix]]
    available: np.ndarray
    reconstructed_available: np.ndarray
    self_reconstructed: List[Optional[DenseMatrix]] = field(default_factory=list)
    self_available: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Forward building blocks
# ---------------------------------------------------------------------------

def bottom_forward(bundle: ModelBundle, i: int, block: DenseMatrix) -> Tuple[DenseMatrix, LayerCache]:
    """Eᵢ = fᵢ(xᵢ)"""
    if block.ndim != 2 or block.shape[1] != bundle.bottoms[i].d_in:
        raise DimensionError(f"bottom_forward client {i}", block.shape, ("n", bundle.bottoms[i].d_in))
    return bundle.bottom(i).forward(block)


def xcom_source(embeddings: Sequence[DenseMatrix], sources: Sequence[int]) -> DenseMatrix:
    """Mean of the source clients' embeddings (a single source is passed through)"""
    if not sources:
        raise ValidationError("XCom needs at least one source client")
    if len(sources) == 1:
        return embeddings[sources[0]]
    return avg_embeddings([embeddings[j] for j in sources])


def xcom_complete(bundle: ModelBundle, i: int, source: DenseMatrix) -> Tuple[DenseMatrix, LayerCache]:
    """X̃ᵢ = XComᵢ(source)"""
    if source.ndim != 2 or source.shape[1] != bundle.embed_dim:
        raise DimensionError(f"xcom_complete client {i}", source.shape, ("n", bundle.embed_dim))
    return bundle.xcom(i).forward(source)


def merge_partial(original: DenseMatrix, reconstructed: DenseMatrix, mask: np.ndarray) -> DenseMatrix:
    """Reconstructed values at masked positions, original values elsewhere"""
    if original.shape != reconstructed.shape or original.shape != mask.shape:
        raise DimensionError("merge_partial", original.shape, reconstructed.shape if original.shape != reconstructed.shape else mask.shape)
    return np.where(mask, reconstructed, original)


def avg_embeddings(embeddings: Sequence[DenseMatrix]) -> DenseMatrix:
    if len(embeddings) == 0:
        raise ValidationError("avg_embeddings needs at least one embedding")
    shape = embeddings[0].shape
    for embedding in embeddings[1:]:
        if embedding.shape != shape:
            raise DimensionError("avg_embeddings", shape, embedding.shape)
    return np.mean(np.stack(embeddings, axis=0), axis=0)


def top_forward(bundle: ModelBundle, embedding: DenseMatrix) -> Tuple[DenseMatrix, LayerCache]:
    """Logits in the decision subspace"""
    if embedding.ndim != 2 or embedding.shape[1] != bundle.embed_dim:
        raise DimensionError("top_forward", embedding.shape, ("n", bundle.embed_dim))
    return bundle.top_model().forward(embedding)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(bundle: ModelBundle, path: str, config_hash: str = "") -> Path:
    """JSON container: layer shapes, flat θ and the config hash"""
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": config_hash,
        "shapes": bundle.shapes(),
        "theta": bundle.flatten().tolist(),
    }
    with open(output_path, 'w', encoding='utf-8') as f:
        json.dump(payload, f)
    logger.debug(f"Checkpoint written: {output_path}")
    return output_path


def load_checkpoint(path: str, template: Optional[ModelBundle] = None, expected_hash: Optional[str] = None) -> ModelBundle:
    """
    Restore a bundle

    Args:
        path: Checkpoint file
        template: Bundle whose shapes must match; built from the stored
            shapes when omitted
        expected_hash: Reject checkpoints written under another config

    Raises:
        ValidationError: Unknown format, shape or hash mismatch
    """
    checkpoint_path = Path(path)
    if not checkpoint_path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {checkpoint_path}")
    with open(checkpoint_path, 'r', encoding='utf-8') as f:
        payload = json.load(f)

    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"Not a checkpoint: {checkpoint_path}")
    if expected_hash is not None and payload.get("config_hash") != expected_hash:
        raise ValidationError(
            f"Checkpoint config hash {payload.get('config_hash')} does not match {expected_hash}"
        )

    shapes = payload["shapes"]
    if template is None:
        rng = named_rng(0, "checkpoint")
        template = ModelBundle(
            [FeedForward(s, rng, name=f"bottom{i}") for i, s in enumerate(shapes["bottoms"])],
            [FeedForward(s, rng, name=f"xcom{i}") for i, s in enumerate(shapes["xcoms"])],
            FeedForward(shapes["top"], rng, name="top"),
        )
    elif template.shapes() != shapes:
        raise ValidationError(f"Checkpoint shapes {shapes} do not match model {template.shapes()}")

    bundle = template.copy()
    bundle.load_flat(np.asarray(payload["theta"], dtype=np.float64))
    return bundle
