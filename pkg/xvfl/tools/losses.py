#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
X-VFL Objective

Decision loss with per-sample term activation (two-client and k-client
forms), the two decision-subspace alignment losses, and their weighted sum.
All losses return the scalar value and one flat gradient over θ.

Decision terms are keyed by their functional form:

    indep[i]        ℓ(h(Eᵢ))                          i is a full client
    joint           ℓ(h(E′/m))                        m ≥ 2 full clients
    recon[R]        ℓ(h((Σ_{i∈R} Ẽᵢ + Σ_{j∉R} Eⱼ)/k))  R = reconstructed clients
    self_indep[i]   ℓ(h(Ẽˢᵢ))                         self-sourced completion
    self_recon[R]   ℓ(h((Σ_{i∈R} Ẽˢᵢ + E′)/k))

Each term is averaged over the samples where it is active, so samples that
evaluate the same expression share one normalisation group.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import TRAIN
from ..errors import ConfigError, ValidationError
from .cut_layer import GradientBuffer, RoundState, backward_round, forward_round
from .dataset import VerticalDataset
from .message_ledger import MessageLedger
from .models import ModelBundle, top_forward
from .numkit import mse, softmax_cross_entropy

logger = logging.getLogger(__name__)

# Embedding sources a term can read
EMBEDDING = "E"
RECONSTRUCTED = "R"
SELF_RECONSTRUCTED = "S"


@dataclass
class LossConfig:
    lambda1: float = TRAIN.LAMBDA1
    lambda2: float = TRAIN.LAMBDA2
    similarity: str = "mse"
    classification: str = "cross_entropy"
    xcom_self_input: bool = False

    def validate(self) -> "LossConfig":
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"lambda1/lambda2 must be >= 0, got {self.lambda1}/{self.lambda2}")
        if self.similarity != "mse":
            raise ConfigError(f"Unsupported similarity loss: {self.similarity}")
        if self.classification != "cross_entropy":
            raise ConfigError(f"Unsupported classification loss: {self.classification}")
        return self


@dataclass
class DecisionTerm:
    """One decision term: active rows plus per-row coefficients of each source"""
    key: str
    active: np.ndarray  # n booleans
    parts: List[Tuple[str, int, np.ndarray]]  # (source, client, n coefficients)


@dataclass
class TermActivation:
    """Per-sample activation of every decision term, in evaluation order"""
    terms: List[DecisionTerm] = field(default_factory=list)

    def keys(self) -> List[str]:
        return [term.key for term in self.terms]

    def counts(self) -> Dict[str, int]:
        return {term.key: int(term.active.sum()) for term in self.terms}

    def active_for(self, sample: int) -> List[str]:
        return [term.key for term in self.terms if term.active[sample]]

    def _add(self, key: str, active: np.ndarray, parts: List[Tuple[str, int, np.ndarray]]):
        for term in self.terms:
            if term.key == key:
                term.active = term.active | active
                merged = []
                for (source, client, coef), (_, _, extra) in zip(term.parts, parts):
                    merged.append((source, client, np.where(active, extra, coef)))
                term.parts = merged
                return
        self.terms.append(DecisionTerm(key, active.copy(), parts))


@dataclass
class LossBreakdown:
    """Value, flat gradient and instrumentation of one objective evaluation"""
    loss: float
    grad: np.ndarray
    decision: float = 0.0
    dsalign1: float = 0.0
    dsalign2: float = 0.0
    terms: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    evaluations: Dict[str, int] = field(default_factory=dict)
    kink_margin: float = float("inf")

    def term_row(self) -> Dict[str, float]:
        return {"decision": self.decision, "dsalign1": self.dsalign1, "dsalign2": self.dsalign2}


def _group_key(prefix: str, clients: Sequence[int]) -> str:
    return f"{prefix}[{','.join(str(c) for c in clients)}]"


def _full_matrix(batch: VerticalDataset, full_clients: Optional[np.ndarray]) -> np.ndarray:
    full = batch.full if full_clients is None else np.asarray(full_clients, dtype=bool)
    if full.shape != (batch.n_samples, batch.k):
        raise ValidationError(f"full_clients must be {(batch.n_samples, batch.k)}, got {full.shape}")
    if batch.k > 1 and np.any(full.sum(axis=1) == 0):
        raise ConfigError("Every sample needs at least one full-feature client (m >= 1)")
    return full


def build_activation_k(
    batch: VerticalDataset,
    self_input: bool = False,
    full_clients: Optional[np.ndarray] = None
) -> TermActivation:
    """
    Activation of the k-client decision loss

    Aligned samples: indep[i] for all i, joint, and recon[i] for every i.
    Non-aligned samples: indep[i] for i in M, joint when m ≥ 2, and
    recon[complement of M].
    """
    n, k = batch.n_samples, batch.k
    full = _full_matrix(batch, full_clients)
    aligned = batch.aligned
    m = full.sum(axis=1)
    activation = TermActivation()

    for i in range(k):
        coef = np.ones(n)
        activation._add(f"indep[{i}]", full[:, i], [(EMBEDDING, i, coef)])

    if k > 1:
        joint_active = m >= 2
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(m > 0, 1.0 / np.maximum(m, 1), 0.0)
        parts = [(EMBEDDING, j, np.where(full[:, j], share, 0.0)) for j in range(k)]
        activation._add("joint", joint_active, parts)

        for i in range(k):
            active = aligned.copy()
            parts = [
                (RECONSTRUCTED if j == i else EMBEDDING, j, np.full(n, 1.0 / k))
                for j in range(k)
            ]
            activation._add(_group_key("recon", [i]), active, parts)

        non_aligned = np.flatnonzero(~aligned)
        patterns = {}
        for s in non_aligned:
            reconstructed = tuple(int(j) for j in np.flatnonzero(~full[s]))
            patterns.setdefault(reconstructed, []).append(s)
        for reconstructed in sorted(patterns):
            active = np.zeros(n, dtype=bool)
            active[patterns[reconstructed]] = True
            parts = [
                (RECONSTRUCTED if j in reconstructed else EMBEDDING, j, np.full(n, 1.0 / k))
                for j in range(k)
            ]
            activation._add(_group_key("recon", reconstructed), active, parts)

        if self_input:
            for i in range(k):
                active = ~aligned & ~full[:, i]
                if np.any(active):
                    activation._add(f"self_indep[{i}]", active, [(SELF_RECONSTRUCTED, i, np.ones(n))])
            for reconstructed in sorted(patterns):
                active = np.zeros(n, dtype=bool)
                active[patterns[reconstructed]] = True
                parts = [
                    (SELF_RECONSTRUCTED if j in reconstructed else EMBEDDING, j, np.full(n, 1.0 / k))
                    for j in range(k)
                ]
                activation._add(_group_key("self_recon", reconstructed), active, parts)

    return activation


def build_activation_2client(batch: VerticalDataset) -> TermActivation:
    """
    Activation of the two-client decision loss

    Aligned samples activate all five terms; case 1 (A full, B partial)
    activates ℓ(h(E_a)) and ℓ(h((E_a+Ẽ_b)/2)); case 2 is the mirror.
    """
    if batch.k != 2:
        raise ConfigError(f"The two-client decision loss needs k=2, got k={batch.k}")
    n = batch.n_samples
    aligned = batch.aligned
    a_full = aligned | ~batch.partial[:, 0]
    b_full = aligned | ~batch.partial[:, 1]
    one, half = np.ones(n), np.full(n, 0.5)

    activation = TermActivation()
    activation._add("indep[0]", a_full, [(EMBEDDING, 0, one)])
    activation._add("indep[1]", b_full, [(EMBEDDING, 1, one)])
    activation._add("joint", aligned.copy(), [(EMBEDDING, 0, half), (EMBEDDING, 1, half)])
    activation._add("recon[1]", aligned | batch.partial[:, 1], [(EMBEDDING, 0, half), (RECONSTRUCTED, 1, half)])
    activation._add("recon[0]", aligned | batch.partial[:, 0], [(RECONSTRUCTED, 0, half), (EMBEDDING, 1, half)])
    return activation


class _Evaluator:
    """Accumulates term values and cut-layer gradients for one forward round"""

    def __init__(self, bundle: ModelBundle, state: RoundState):
        self.bundle = bundle
        self.state = state
        n, k, e = state.batch.n_samples, bundle.k, bundle.embed_dim
        self.buffer = GradientBuffer(bundle)
        self.d_sources = {
            EMBEDDING: [np.zeros((n, e)) for _ in range(k)],
            RECONSTRUCTED: [np.zeros((n, e)) for _ in range(k)],
            SELF_RECONSTRUCTED: [np.zeros((n, e)) for _ in range(k)],
        }
        self.kink_margin = min(
            [cache.min_abs_hidden_preactivation() for cache in state.caches()] + [float("inf")]
        )

    def source(self, kind: str, i: int) -> np.ndarray:
        embeddings = self.state.embeddings
        if kind == EMBEDDING:
            return embeddings.embeddings[i]
        if kind == RECONSTRUCTED:
            return embeddings.reconstructed[i]
        return embeddings.self_reconstructed[i]

    def _available(self, kind: str) -> np.ndarray:
        embeddings = self.state.embeddings
        if kind == EMBEDDING:
            return embeddings.available
        if kind == RECONSTRUCTED:
            return embeddings.reconstructed_available
        return embeddings.self_available

    def top(self, inputs: np.ndarray):
        logits, cache = top_forward(self.bundle, inputs)
        self.kink_margin = min(self.kink_margin, cache.min_abs_hidden_preactivation())
        return logits, cache

    def top_backward(self, upstream: np.ndarray, cache) -> np.ndarray:
        d_inputs, grads = self.bundle.top.backward(upstream, cache)
        self.buffer.add_top(grads)
        return d_inputs

    def decision_term(self, term: DecisionTerm, labels: np.ndarray, scale: float = 1.0) -> float:
        rows = np.flatnonzero(term.active)
        if rows.size == 0:
            return 0.0
        inputs = np.zeros((rows.size, self.bundle.embed_dim))
        for kind, client, coef in term.parts:
            weights = coef[rows]
            if not np.any(weights):
                continue
            used = rows[weights != 0]
            if not np.all(self._available(kind)[used, client]):
                raise ValidationError(f"Term {term.key} needs source {kind}{client} that is not available")
            inputs += weights[:, None] * self.source(kind, client)[rows]
        logits, cache = self.top(inputs)
        value, d_logits = softmax_cross_entropy(logits, labels[rows])
        d_inputs = self.top_backward(scale * d_logits, cache)
        for kind, client, coef in term.parts:
            weights = coef[rows]
            if np.any(weights):
                self.d_sources[kind][client][rows] += weights[:, None] * d_inputs
        return value

    def finish(self, ledger: Optional[MessageLedger] = None) -> np.ndarray:
        backward_round(
            self.bundle,
            self.state,
            self.d_sources[EMBEDDING],
            self.d_sources[RECONSTRUCTED],
            self.d_sources[SELF_RECONSTRUCTED],
            buffer=self.buffer,
            ledger=ledger,
        )
        return self.buffer.flatten()


def _decision(evaluator: _Evaluator, activation: TermActivation, breakdown: LossBreakdown, scale: float = 1.0) -> float:
    labels = evaluator.state.batch.labels
    total = 0.0
    for term in activation.terms:
        value = evaluator.decision_term(term, labels, scale)
        breakdown.terms[term.key] = value
        breakdown.counts[term.key] = int(term.active.sum())
        breakdown.evaluations[term.key] = 1 if term.active.any() else 0
        total += value
    return total


def _dsalign1(evaluator: _Evaluator, breakdown: LossBreakdown, scale: float = 1.0) -> float:
    """Σᵢ MSE(h(Ẽᵢ), h(Eᵢ)) over aligned rows"""
    state = evaluator.state
    rows = np.flatnonzero(state.batch.aligned)
    k = evaluator.bundle.k
    breakdown.counts["dsalign1"] = int(rows.size) * (k if k > 1 else 0)
    if rows.size == 0 or k < 2:
        return 0.0
    total = 0.0
    for i in range(k):
        pred, pred_cache = evaluator.top(state.embeddings.reconstructed[i][rows])
        target, target_cache = evaluator.top(state.embeddings.embeddings[i][rows])
        value, d_pred, d_target = mse(pred, target)
        evaluator.d_sources[RECONSTRUCTED][i][rows] += evaluator.top_backward(scale * d_pred, pred_cache)
        evaluator.d_sources[EMBEDDING][i][rows] += evaluator.top_backward(scale * d_target, target_cache)
        breakdown.terms[f"dsalign1[{i}]"] = value
        total += value
    return total


def _dsalign2(evaluator: _Evaluator, breakdown: LossBreakdown, scale: float = 1.0) -> float:
    """Σᵢ MSE(h(Eᵢ), h(mean of all Eⱼ)) over aligned rows"""
    state = evaluator.state
    rows = np.flatnonzero(state.batch.aligned)
    k = evaluator.bundle.k
    breakdown.counts["dsalign2"] = int(rows.size) * k
    if rows.size == 0:
        return 0.0
    embeddings = [state.embeddings.embeddings[j][rows] for j in range(k)]
    average = np.mean(np.stack(embeddings, axis=0), axis=0)
    target, target_cache = evaluator.top(average)
    d_target_total = np.zeros_like(target)
    total = 0.0
    for i in range(k):
        pred, pred_cache = evaluator.top(embeddings[i])
        value, d_pred, d_target = mse(pred, target)
        evaluator.d_sources[EMBEDDING][i][rows] += evaluator.top_backward(scale * d_pred, pred_cache)
        d_target_total += d_target
        breakdown.terms[f"dsalign2[{i}]"] = value
        total += value
    d_average = evaluator.top_backward(scale * d_target_total, target_cache)
    for j in range(k):
        evaluator.d_sources[EMBEDDING][j][rows] += d_average / k
    return total


def evaluate_objective(
    bundle: ModelBundle,
    batch: VerticalDataset,
    config: LossConfig,
    include: Sequence[str] = ("decision", "dsalign1", "dsalign2"),
    formulation: str = "k",
    activation: Optional[TermActivation] = None,
    full_clients: Optional[np.ndarray] = None,
    ledger: Optional[MessageLedger] = None,
    round_index: int = 0
) -> LossBreakdown:
    """
    One forward round, the requested loss parts, and one backward round

    Args:
        bundle: Model parameters
        batch: Mixed batch of aligned and non-aligned samples
        config: λ weights and self-input switch
        include: Loss parts to evaluate
        formulation: 'k' (general) or 'two_client'
        activation: Precomputed term activation (built from the batch when None)
        full_clients: Optional n x k override of the full-client sets M
        ledger: Records cut-layer traffic when given

    Returns:
        LossBreakdown with loss, flat gradient and per-term instrumentation
    """
    config.validate()
    if full_clients is not None:
        full = _full_matrix(batch, full_clients)
        batch = dataclasses.replace(batch, partial=~full & ~batch.aligned[:, None])

    self_input = config.xcom_self_input and "decision" in include and formulation == "k"
    if activation is None and "decision" in include:
        if formulation == "two_client":
            activation = build_activation_2client(batch)
        elif formulation == "k":
            activation = build_activation_k(batch, self_input=self_input)
        else:
            raise ConfigError(f"Unknown formulation: {formulation}")

    state = forward_round(bundle, batch, self_input=self_input, ledger=ledger, round_index=round_index)
    evaluator = _Evaluator(bundle, state)
    breakdown = LossBreakdown(loss=0.0, grad=np.zeros(0))

    if "decision" in include:
        breakdown.decision = _decision(evaluator, activation, breakdown)
    if "dsalign1" in include:
        breakdown.dsalign1 = _dsalign1(evaluator, breakdown, config.lambda1)
    if "dsalign2" in include:
        breakdown.dsalign2 = _dsalign2(evaluator, breakdown, config.lambda2)

    breakdown.loss = breakdown.decision
    for weight, value in ((config.lambda1, breakdown.dsalign1), (config.lambda2, breakdown.dsalign2)):
        if weight > 0:
            breakdown.loss += weight * value
    breakdown.grad = evaluator.finish(ledger)
    breakdown.kink_margin = evaluator.kink_margin
    return breakdown


_UNIT = LossConfig(lambda1=1.0, lambda2=1.0)


def decision_loss_2client(
    bundle: ModelBundle,
    batch: VerticalDataset,
    activation: Optional[TermActivation] = None
) -> Tuple[float, np.ndarray]:
    result = evaluate_objective(bundle, batch, _UNIT, include=("decision",), formulation="two_client", activation=activation)
    return result.loss, result.grad


def decision_loss_k(
    bundle: ModelBundle,
    batch: VerticalDataset,
    activation: Optional[TermActivation] = None,
    full_clients: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    result = evaluate_objective(
        bundle, batch, _UNIT, include=("decision",), formulation="k",
        activation=activation, full_clients=full_clients,
    )
    return result.loss, result.grad


def dsalign1(bundle: ModelBundle, batch: VerticalDataset) -> Tuple[float, np.ndarray]:
    result = evaluate_objective(bundle, batch, _UNIT, include=("dsalign1",))
    return result.dsalign1, result.grad


def dsalign2(bundle: ModelBundle, batch: VerticalDataset) -> Tuple[float, np.ndarray]:
    result = evaluate_objective(bundle, batch, _UNIT, include=("dsalign2",))
    return result.dsalign2, result.grad


def total_loss(bundle: ModelBundle, batch: VerticalDataset, config: LossConfig) -> Tuple[float, np.ndarray]:
    """L = L_decision + λ₁·L_DSAlign₁ + λ₂·L_DSAlign₂ with one flat gradient"""
    result = evaluate_objective(bundle, batch, config)
    return result.loss, result.grad
