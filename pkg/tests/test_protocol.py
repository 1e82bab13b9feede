#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test the training protocol

Cut-layer traffic accounting, the leak audit, round logs, checkpoints and
divergence handling.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from tests.builders import create_test_bundle, create_test_dataset
from xvfl.config import OptimizerSection
from xvfl.errors import ConfigError, DivergenceError, LeakError
from xvfl.tools.cut_layer import forward_round
from xvfl.tools.losses import LossConfig
from xvfl.tools.message_ledger import SERVER, MessageLedger, PayloadKind, client_node
from xvfl.tools.models import load_checkpoint
from xvfl.tools.objectives import XVFLObjective
from xvfl.tools.optim import OptimizerSpec
from xvfl.tools.protocol import (
    ROUND_LOG_COLUMNS,
    Topology,
    TrainingArtifacts,
    checkpoint_cadence,
    resolve_optimizer,
    round_log_frame,
    train,
)


def create_test_spec(eta=0.05, batch_size=8):
    return OptimizerSpec(kind="sgd", eta=eta, batch_size=batch_size)


def test_embedding_traffic_of_one_round():
    dataset = create_test_dataset(n=16, k=3, m=6, overlap=1.0, missing=0.0)
    bundle = create_test_bundle(dataset, embed_dim=4)
    ledger = MessageLedger(dataset.k)
    forward_round(bundle, dataset, ledger=ledger, round_index=0)

    summary = ledger.round_summary(0)
    n, k, e = 16, 3, 4
    assert summary["embedding"] == k * n * e * 8
    assert summary["reconstructed_embedding"] == k * n * e * 8
    assert summary["xcom_source"] == k * n * e * 8
    assert summary["bytes_up"] == 2 * k * n * e * 8
    assert summary["bytes_down"] == k * n * e * 8
    assert "raw_features" not in summary, "local feature use is not traffic"
    assert ledger.audit()


def test_round_records_local_feature_use_for_the_audit():
    dataset = create_test_dataset(n=20, k=3, m=6, overlap=0.5, missing=0.5, seed=2)
    bundle = create_test_bundle(dataset)
    ledger = MessageLedger(dataset.k)
    forward_round(bundle, dataset, self_input=True, ledger=ledger, round_index=0)

    local = [m for m in ledger.messages(0) if m["kind"] in ("raw_features", "reconstructed_features")]
    assert {m["sender"] for m in local if m["kind"] == "raw_features"} == {client_node(i) for i in range(3)}
    assert any(m["kind"] == "reconstructed_features" for m in local)
    for message in local:
        assert message["sender"] == message["receiver"], "feature tensors stay with their owner"
        assert message["provenance"].startswith(message["sender"] + ":")
    assert ledger.audit()


def test_raw_features_cannot_reach_server():
    ledger = MessageLedger(2)
    with pytest.raises(LeakError):
        ledger.send(0, client_node(0), SERVER, PayloadKind.RAW_FEATURES, np.zeros((2, 3)))
    # Local use is recorded without complaint
    ledger.send(0, client_node(0), client_node(0), PayloadKind.RAW_FEATURES, np.zeros((2, 3)))
    assert ledger.audit()


def test_audit_flags_forwarded_features():
    ledger = MessageLedger(2)
    ledger.send(0, client_node(0), client_node(0), PayloadKind.RECONSTRUCTED_FEATURES, np.zeros((1, 2)))
    ledger.graph.add_edge(client_node(0), SERVER, round=0, kind="reconstructed_features", bytes=16,
                          provenance=f"{client_node(0)}:reconstructed_features")
    with pytest.raises(LeakError):
        ledger.audit()


def test_train_writes_logs_and_checkpoints(tmp_path):
    dataset = create_test_dataset(n=40, seed=1)
    bundle = create_test_bundle(dataset, seed=1)
    ledger = MessageLedger(dataset.k)
    checkpoint_dir = tmp_path / "checkpoints"

    trained, logs = train(dataset, bundle, LossConfig(), create_test_spec(), 3, seed=0,
                          checkpoint_dir=str(checkpoint_dir), ledger=ledger, config_hash="h")

    assert len(logs) == 3
    assert [log.round for log in logs] == [0, 1, 2]
    assert all(np.isfinite(log.loss) for log in logs)
    assert all(log.bytes_up > 0 and log.bytes_down > 0 for log in logs)
    assert ledger.rounds() == 3
    assert not np.array_equal(trained.flatten(), bundle.flatten())

    for name in ["round_000000.json", "round_000001.json", "round_000002.json", "final.json"]:
        assert (checkpoint_dir / name).exists(), f"missing {name}"
    restored = load_checkpoint(str(checkpoint_dir / "final.json"), expected_hash="h")
    assert np.array_equal(restored.flatten(), trained.flatten())


def test_train_is_deterministic():
    dataset = create_test_dataset(n=40, seed=1)
    bundle = create_test_bundle(dataset, seed=1)
    first, logs_a = train(dataset, bundle, LossConfig(), create_test_spec(), 4, seed=2)
    second, logs_b = train(dataset, bundle, LossConfig(), create_test_spec(), 4, seed=2)
    assert np.array_equal(first.flatten(), second.flatten())
    assert round_log_frame(logs_a).equals(round_log_frame(logs_b))


def test_zero_rounds_return_untouched_copy():
    dataset = create_test_dataset(n=20)
    bundle = create_test_bundle(dataset)
    trained, logs = train(dataset, bundle, LossConfig(), create_test_spec(), 0, seed=0)
    assert logs == []
    assert trained is not bundle
    assert np.array_equal(trained.flatten(), bundle.flatten())

    with pytest.raises(ConfigError):
        train(dataset, bundle, LossConfig(), create_test_spec(), -1, seed=0)


def test_divergence_keeps_last_good_parameters(tmp_path):
    dataset = create_test_dataset(n=30, seed=3)
    dataset.blocks[0][:] = np.nan
    bundle = create_test_bundle(dataset)
    checkpoint_dir = tmp_path / "checkpoints"

    with pytest.raises(DivergenceError) as info:
        train(dataset, bundle, LossConfig(), create_test_spec(), 5, seed=0, checkpoint_dir=str(checkpoint_dir))

    error = info.value
    assert error.step == 0
    assert error.logs == []
    assert np.array_equal(error.last_good_theta, bundle.flatten())
    assert (checkpoint_dir / "last_good.json").exists()
    assert not (checkpoint_dir / "final.json").exists()


def test_page_training_logs_branches():
    dataset = create_test_dataset(n=40, seed=4)
    bundle = create_test_bundle(dataset)
    section = OptimizerSection(kind="page", eta=0.05, steps=6, page_b=20, page_b_prime=4, page_p=0.5)
    spec = resolve_optimizer(section, batch_size=8)
    assert spec.kind == "page"
    assert (spec.page.b, spec.page.b_prime, spec.page.p) == (20, 4, 0.5)

    _, logs = train(dataset, bundle, LossConfig(), spec, 6, seed=0)
    assert {log.branch for log in logs} <= {"refresh", "correction"}
    assert all(log.grad_evals == (20 if log.branch == "refresh" else 4) for log in logs)


def test_auto_mode_caps_page_batch_at_pool_size():
    dataset = create_test_dataset(n=30, seed=5)
    bundle = create_test_bundle(dataset)
    objective = XVFLObjective(dataset, bundle, LossConfig())
    section = OptimizerSection(kind="page", auto=True, target_eps=1e-3, steps=5)
    spec = resolve_optimizer(section, batch_size=8, objective=objective, seed=0)
    assert spec.page.b <= dataset.n_samples

    with pytest.raises(ConfigError):
        resolve_optimizer(OptimizerSection(auto=True), batch_size=8)


def test_round_log_has_no_wall_time(tmp_path):
    dataset = create_test_dataset(n=20)
    bundle = create_test_bundle(dataset)
    _, logs = train(dataset, bundle, LossConfig(), create_test_spec(), 2, seed=0)
    frame = round_log_frame(logs)
    assert list(frame.columns) == ROUND_LOG_COLUMNS
    assert "wall_time" not in frame.columns

    artifacts = TrainingArtifacts(str(tmp_path))
    path = artifacts.write_round_log(logs)
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(ROUND_LOG_COLUMNS)


def test_traffic_summary_file(tmp_path):
    dataset = create_test_dataset(n=20)
    bundle = create_test_bundle(dataset)
    ledger = MessageLedger(dataset.k)
    train(dataset, bundle, LossConfig(), create_test_spec(), 2, seed=0, ledger=ledger)
    path = TrainingArtifacts(str(tmp_path)).write_ledger_summary(ledger)
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["rounds"] == 2
    assert payload["audit_passed"] is True
    assert payload["bytes"]["bytes_up"] > 0


def test_topology_and_cadence():
    dataset = create_test_dataset(n=20, k=3, m=6)
    topology = Topology.from_dataset(dataset)
    assert topology.k == 3 and topology.client_dims == dataset.client_dims
    with pytest.raises(ConfigError):
        Topology(k=2, client_dims=[3], n_classes=2).validate()
    assert checkpoint_cadence(3) == 1
    assert checkpoint_cadence(1000) == 50


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
