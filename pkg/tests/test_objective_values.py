#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test objective values against a per-sample reference

The reference walks one sample at a time through plain matrix products,
so it shares no code with the batched cut-layer rounds.
"""

import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from tests.builders import create_test_bundle, create_test_dataset
from xvfl.tools.losses import (
    LossConfig,
    decision_loss_2client,
    decision_loss_k,
    dsalign1,
    dsalign2,
    evaluate_objective,
)


def _mlp(net, x):
    out = x
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = out @ w + b
        if index < len(net.weights) - 1:
            out = np.maximum(out, 0.0)
    return out


def _cross_entropy(logits, label):
    top = logits.max()
    return top + np.log(np.sum(np.exp(logits - top))) - logits[label]


def _key(prefix, clients):
    return f"{prefix}[{','.join(str(c) for c in clients)}]"


def reference_objective(bundle, dataset, lambda1=1.0, lambda2=1.0, self_input=False):
    """Decision loss, both alignment losses and their weighted total"""
    k = dataset.k
    terms = defaultdict(list)
    top_pairs = {"dsalign1": [], "dsalign2": []}

    for s in range(dataset.n_samples):
        full = dataset.full[s]
        aligned = bool(dataset.aligned[s])
        label = int(dataset.labels[s])
        x = [dataset.blocks[i][s] for i in range(k)]
        holders = [j for j in range(k) if full[j]]
        missing = [j for j in range(k) if not full[j]]

        embedding = {j: _mlp(bundle.bottoms[j], x[j]) for j in holders}

        completed = {}
        if k > 1:
            for i in range(k):
                if not (aligned or dataset.partial[s, i]):
                    continue
                donors = [j for j in range(k) if j != i] if aligned else holders
                guess = _mlp(bundle.xcoms[i], np.mean([embedding[j] for j in donors], axis=0))
                mask = np.ones_like(x[i], dtype=bool) if aligned else dataset.missing_masks[i][s]
                completed[i] = _mlp(bundle.bottoms[i], np.where(mask, guess, x[i]))

        own = {}
        if self_input and not aligned:
            for i in missing:
                guess = _mlp(bundle.xcoms[i], _mlp(bundle.bottoms[i], x[i]))
                own[i] = _mlp(bundle.bottoms[i], np.where(dataset.missing_masks[i][s], guess, x[i]))

        def add(key, inputs):
            terms[key].append(_cross_entropy(_mlp(bundle.top, inputs), label))

        for i in holders:
            add(_key("indep", [i]), embedding[i])
        if k > 1:
            if len(holders) >= 2:
                add("joint", np.mean([embedding[j] for j in holders], axis=0))
            if aligned:
                for i in range(k):
                    others = sum(embedding[j] for j in range(k) if j != i)
                    add(_key("recon", [i]), (completed[i] + others) / k)
            else:
                kept = sum(embedding[j] for j in holders)
                add(_key("recon", missing), (sum(completed[i] for i in missing) + kept) / k)
                if self_input:
                    for i in missing:
                        add(_key("self_indep", [i]), own[i])
                    add(_key("self_recon", missing), (sum(own[i] for i in missing) + kept) / k)

        if aligned:
            average_logits = _mlp(bundle.top, np.mean([embedding[j] for j in range(k)], axis=0))
            for i in range(k):
                logits = _mlp(bundle.top, embedding[i])
                if k > 1:
                    top_pairs["dsalign1"].append((i, _mlp(bundle.top, completed[i]) - logits))
                top_pairs["dsalign2"].append((i, logits - average_logits))

    decision = sum(np.mean(values) for values in terms.values())
    aligned_count = int(dataset.aligned.sum())
    parts = {}
    for name, pairs in top_pairs.items():
        total = 0.0
        for i in range(k):
            diffs = [diff for client, diff in pairs if client == i]
            if diffs:
                total += np.sum(np.square(diffs)) / (aligned_count * dataset.n_classes)
        parts[name] = total
    return {
        "decision": decision,
        "dsalign1": parts["dsalign1"],
        "dsalign2": parts["dsalign2"],
        "total": decision + lambda1 * parts["dsalign1"] + lambda2 * parts["dsalign2"],
        "keys": set(terms),
    }


def _close(a, b):
    return np.isclose(a, b, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("k,self_input,seed", [
    (2, False, 0),
    (2, True, 3),
    (3, True, 1),
    (4, False, 2),
    (4, True, 5),
])
def test_objective_matches_per_sample_reference(k, self_input, seed):
    dataset = create_test_dataset(n=36, m=2 * k, k=k, overlap=0.4, missing=0.5, seed=seed)
    bundle = create_test_bundle(dataset, seed=seed)
    config = LossConfig(lambda1=0.3, lambda2=0.7, xcom_self_input=self_input)

    breakdown = evaluate_objective(bundle, dataset, config)
    expected = reference_objective(bundle, dataset, 0.3, 0.7, self_input)

    assert _close(breakdown.decision, expected["decision"]), f"{breakdown.decision} != {expected['decision']}"
    assert _close(breakdown.dsalign1, expected["dsalign1"])
    assert _close(breakdown.dsalign2, expected["dsalign2"])
    assert _close(breakdown.loss, expected["total"]), f"{breakdown.loss} != {expected['total']}"
    decision_keys = {key for key, count in breakdown.counts.items() if count and not key.startswith("dsalign")}
    assert decision_keys == expected["keys"]


def test_two_client_loss_on_a_three_sample_batch():
    dataset = create_test_dataset(n=20, n_classes=2, overlap=0.5, missing=0.5)
    rows = [
        int(np.flatnonzero(dataset.aligned)[0]),
        int(np.flatnonzero(~dataset.aligned & dataset.partial[:, 1])[0]),
        int(np.flatnonzero(~dataset.aligned & dataset.partial[:, 0])[0]),
    ]
    batch = dataset.subset(np.array(rows))
    bundle = create_test_bundle(batch, seed=7, embed_dim=2)

    value, _ = decision_loss_2client(bundle, batch)
    assert _close(value, reference_objective(bundle, batch)["decision"])


def test_k_client_decision_loss_for_four_clients():
    dataset = create_test_dataset(n=40, m=8, k=4, overlap=0.3, missing=0.5, seed=4)
    bundle = create_test_bundle(dataset, seed=4)
    value, _ = decision_loss_k(bundle, dataset)
    assert _close(value, reference_objective(bundle, dataset)["decision"])


def test_alignment_loss_values():
    two = create_test_dataset(n=30, overlap=0.5, missing=0.5, seed=11)
    bundle = create_test_bundle(two, seed=11)
    assert _close(dsalign1(bundle, two)[0], reference_objective(bundle, two)["dsalign1"])

    three = create_test_dataset(n=30, m=6, k=3, overlap=0.5, missing=0.5, seed=12)
    bundle = create_test_bundle(three, seed=12)
    assert _close(dsalign2(bundle, three)[0], reference_objective(bundle, three)["dsalign2"])


def create_constant_embedding_bundle(dataset, constant):
    """Every bottom model outputs the same vector whatever its input"""
    bundle = create_test_bundle(dataset, seed=3, embed_dim=constant.shape[0])
    for bottom in bundle.bottoms:
        bottom.weights[-1][:] = 0.0
        bottom.biases[-1][:] = constant
    return bundle


def test_identical_embeddings_share_one_decision_value():
    dataset = create_test_dataset(n=16, overlap=1.0, missing=0.0, seed=2)
    constant = np.array([0.4, -0.2, 0.1, 0.3])
    bundle = create_constant_embedding_bundle(dataset, constant)

    logits = _mlp(bundle.top, constant)
    single = np.mean([_cross_entropy(logits, int(y)) for y in dataset.labels])
    value, _ = decision_loss_2client(bundle, dataset)
    assert _close(value, 5 * single), "all five terms see the same embedding"


def test_identical_embeddings_are_an_alignment_fixed_point():
    dataset = create_test_dataset(n=16, overlap=0.5, missing=0.5, seed=2)
    bundle = create_constant_embedding_bundle(dataset, np.array([0.4, -0.2, 0.1, 0.3]))

    for loss_fn in (dsalign1, dsalign2):
        value, grad = loss_fn(bundle, dataset)
        assert value == 0.0, f"{loss_fn.__name__} is not zero"
        assert not np.any(grad), f"{loss_fn.__name__} has a nonzero gradient"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
