#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test the X-VFL objective

Term activation tables, gradient correctness against central differences,
and agreement between the two-client and k-client decision losses.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from tests.builders import UNIT_LOSS, create_kink_safe_bundle, create_test_bundle, create_test_dataset, loss_at
from xvfl.errors import ConfigError
from xvfl.tools.losses import (
    LossConfig,
    build_activation_2client,
    build_activation_k,
    decision_loss_2client,
    decision_loss_k,
    dsalign1,
    dsalign2,
    evaluate_objective,
    total_loss,
)
from xvfl.tools.numkit import finite_diff_grad


def _first(mask):
    return int(np.flatnonzero(mask)[0])


def test_two_client_activation_table():
    dataset = create_test_dataset(n=20, overlap=0.5, missing=0.5)
    activation = build_activation_2client(dataset)

    aligned = _first(dataset.aligned)
    assert sorted(activation.active_for(aligned)) == sorted(["indep[0]", "indep[1]", "joint", "recon[0]", "recon[1]"])

    case_a_full = _first(~dataset.aligned & dataset.partial[:, 1])
    assert sorted(activation.active_for(case_a_full)) == ["indep[0]", "recon[1]"]

    case_b_full = _first(~dataset.aligned & dataset.partial[:, 0])
    assert sorted(activation.active_for(case_b_full)) == ["indep[1]", "recon[0]"]


def test_k_client_activation_follows_full_set():
    dataset = create_test_dataset(n=30, m=9, k=3, overlap=0.4, missing=0.5)
    full = dataset.full.copy()
    non_aligned = np.flatnonzero(~dataset.aligned)
    two_full = non_aligned[0]
    full[two_full] = [True, True, False]

    activation = build_activation_k(dataset, full_clients=full)
    assert sorted(activation.active_for(two_full)) == ["indep[0]", "indep[1]", "joint", "recon[2]"]

    aligned = _first(dataset.aligned)
    expected = ["indep[0]", "indep[1]", "indep[2]", "joint", "recon[0]", "recon[1]", "recon[2]"]
    assert sorted(activation.active_for(aligned)) == expected

    one_full = non_aligned[1]
    j = int(np.flatnonzero(full[one_full])[0])
    others = ",".join(str(c) for c in range(3) if c != j)
    assert sorted(activation.active_for(one_full)) == [f"indep[{j}]", f"recon[{others}]"]


def test_self_input_adds_self_sourced_terms():
    dataset = create_test_dataset(n=20, m=6, k=2, overlap=0.5, missing=0.5)
    plain = build_activation_k(dataset)
    with_self = build_activation_k(dataset, self_input=True)
    extra = set(with_self.keys()) - set(plain.keys())
    assert extra, "self-input must add terms"
    assert all(key.startswith("self_") for key in extra)
    assert not any(with_self.terms[with_self.keys().index(key)].active[dataset.aligned].any() for key in extra), \
        "self-sourced terms are inactive on aligned samples"


@pytest.mark.parametrize("seed", range(100))
def test_two_client_and_k_forms_agree_for_two_clients(seed):
    dataset = create_test_dataset(n=16, overlap=0.5, missing=0.5, seed=seed)
    bundle = create_test_bundle(dataset, seed=seed)
    loss_two, grad_two = decision_loss_2client(bundle, dataset)
    loss_k, grad_k = decision_loss_k(bundle, dataset)
    assert np.isclose(loss_two, loss_k, rtol=1e-12, atol=1e-12)
    assert np.allclose(grad_two, grad_k, rtol=1e-10, atol=1e-12)


def test_two_client_form_rejects_three_clients():
    dataset = create_test_dataset(n=12, m=6, k=3)
    with pytest.raises(ConfigError):
        build_activation_2client(dataset)


def test_sample_without_full_client_is_rejected():
    dataset = create_test_dataset(n=20, m=6, k=3, overlap=0.5)
    full = dataset.full.copy()
    full[_first(~dataset.aligned)] = False
    bundle = create_test_bundle(dataset)
    with pytest.raises(ConfigError):
        decision_loss_k(bundle, dataset, full_clients=full)


def test_alignment_losses_vanish_without_aligned_samples():
    dataset = create_test_dataset(n=20, overlap=0.0, missing=0.5)
    bundle = create_test_bundle(dataset)
    value1, grad1 = dsalign1(bundle, dataset)
    value2, grad2 = dsalign2(bundle, dataset)
    assert value1 == 0.0 and value2 == 0.0
    assert not np.any(grad1) and not np.any(grad2)


def test_total_loss_is_weighted_sum_of_parts():
    dataset = create_test_dataset(n=24, overlap=0.5, missing=0.5, seed=2)
    bundle = create_test_bundle(dataset, seed=4)
    config = LossConfig(lambda1=0.3, lambda2=0.7)

    total, grad = total_loss(bundle, dataset, config)
    dec, g_dec = decision_loss_k(bundle, dataset)
    a1, g_a1 = dsalign1(bundle, dataset)
    a2, g_a2 = dsalign2(bundle, dataset)

    assert total == pytest.approx(dec + 0.3 * a1 + 0.7 * a2, rel=1e-12)
    assert np.allclose(grad, g_dec + 0.3 * g_a1 + 0.7 * g_a2, rtol=1e-9, atol=1e-12)


def test_zero_weights_reduce_to_decision_loss():
    dataset = create_test_dataset(n=20, seed=5)
    bundle = create_test_bundle(dataset)
    total, _ = total_loss(bundle, dataset, LossConfig(lambda1=0.0, lambda2=0.0))
    dec, _ = decision_loss_k(bundle, dataset)
    assert total == pytest.approx(dec, rel=1e-12)


def test_alignment_parts_are_reported_at_zero_weight():
    dataset = create_test_dataset(n=24, overlap=0.5, missing=0.5, seed=6)
    bundle = create_test_bundle(dataset, seed=2)
    weighted = evaluate_objective(bundle, dataset, LossConfig(lambda1=0.0, lambda2=0.0))
    dec, g_dec = decision_loss_k(bundle, dataset)

    assert weighted.dsalign1 == pytest.approx(dsalign1(bundle, dataset)[0], rel=1e-12)
    assert weighted.dsalign2 == pytest.approx(dsalign2(bundle, dataset)[0], rel=1e-12)
    assert weighted.dsalign1 > 0 and weighted.dsalign2 > 0, "alignment parts are measured even when unweighted"
    assert weighted.loss == pytest.approx(dec, rel=1e-12)
    assert np.allclose(weighted.grad, g_dec, rtol=1e-12, atol=1e-15)


def test_negative_weights_are_rejected():
    dataset = create_test_dataset(n=12)
    bundle = create_test_bundle(dataset)
    with pytest.raises(ConfigError):
        evaluate_objective(bundle, dataset, LossConfig(lambda1=-1.0))


@pytest.mark.parametrize("k,self_input", [(2, False), (2, True), (3, True)])
def test_objective_gradient_matches_finite_differences(k, self_input):
    dataset = create_test_dataset(n=12, m=6, k=k, overlap=0.5, missing=0.5, seed=k)
    config = LossConfig(lambda1=1.0, lambda2=1.0, xcom_self_input=self_input)
    bundle = create_kink_safe_bundle(dataset, config)

    analytic = evaluate_objective(bundle, dataset, config).grad
    numeric = finite_diff_grad(loss_at(bundle, dataset, config), bundle.flatten(), step=1e-6)
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-6), \
        f"max abs error {np.max(np.abs(analytic - numeric)):.3e}"


def test_two_client_gradient_matches_finite_differences():
    dataset = create_test_dataset(n=12, overlap=0.5, missing=0.5, seed=8)
    bundle = create_kink_safe_bundle(dataset, UNIT_LOSS)
    kwargs = {"include": ("decision",), "formulation": "two_client"}
    analytic = evaluate_objective(bundle, dataset, UNIT_LOSS, **kwargs).grad
    numeric = finite_diff_grad(loss_at(bundle, dataset, UNIT_LOSS, **kwargs), bundle.flatten(), step=1e-6)
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-6)


def test_breakdown_reports_term_counts():
    dataset = create_test_dataset(n=20, overlap=0.5, missing=0.5)
    bundle = create_test_bundle(dataset)
    breakdown = evaluate_objective(bundle, dataset, UNIT_LOSS)
    assert breakdown.counts["joint"] == int(dataset.aligned.sum())
    assert breakdown.counts["indep[0]"] == int(dataset.full[:, 0].sum())
    assert breakdown.counts["dsalign2"] == 2 * int(dataset.aligned.sum())
    assert set(breakdown.term_row()) == {"decision", "dsalign1", "dsalign2"}


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
