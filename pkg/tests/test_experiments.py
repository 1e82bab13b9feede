#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test the experiment layer

Baselines, sweep tables, summaries, directional checks, report files and
the λ / completion studies on a small synthetic config.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from tests.builders import create_test_dataset, create_test_run_config
from xvfl.errors import ConfigError, ValidationError
from xvfl.tools.baselines import StandaloneModel, VanillaVFLModel, baseline_train
from xvfl.tools.experiments import (
    LAMBDA_GRIDS,
    SWEEP_COLUMNS,
    SweepSpec,
    directional_checks,
    emit_report,
    evaluations_to_target,
    gap_summary,
    imbalance_gaps,
    run_completion_ablation,
    run_convergence_study,
    run_imbalance,
    run_missing_sweep,
    run_overlap_sweep,
    search_lambdas,
    summarize,
)
from xvfl.tools.models import ModelConfig
from xvfl.tools.optim import OptimizerSpec


def create_test_table(accuracies, sweep="missing", missing_rate=0.9, seeds=(0,)):
    """
    Long-format table from {method: (independent per client, collaborative)}
    """
    rows = []
    for method, (independent, collaborative) in accuracies.items():
        for seed in seeds:
            base = {
                "sweep": sweep, "method": method, "seed": seed, "n_clients": len(independent),
                "missing_rate": missing_rate, "overlap_ratio": 0.2, "imbalance": "", "config_hash": "h",
            }
            for client, accuracy in enumerate(independent):
                rows.append({**base, "mode": "independent", "client": client, "accuracy": accuracy})
            rows.append({**base, "mode": "collaborative", "client": -1, "accuracy": collaborative})
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


GOOD_RESULTS = {
    "xvfl": ([0.80, 0.80], 0.82),
    "standalone": ([0.50, 0.50], 0.70),
    "vanilla_vfl": ([0.30, 0.30], 0.85),
}


def test_baselines_train_and_predict():
    dataset = create_test_dataset(n=40, overlap=0.5, missing=0.5)
    config = ModelConfig(embed_dim=4, bottom_hidden=(5,), top_hidden=(5,))
    optimizer = OptimizerSpec(kind="sgd", eta=0.05, batch_size=8)

    standalone = baseline_train("standalone", dataset, config, optimizer, 5, seed=0)
    assert isinstance(standalone, StandaloneModel)
    assert standalone.predict_independent(1, dataset.blocks[1]).shape == (40,)
    assert standalone.predict_collaborative(dataset.blocks).shape == (40,)

    vanilla = baseline_train("vanilla_vfl", dataset, config, optimizer, 5, seed=0)
    assert isinstance(vanilla, VanillaVFLModel)
    assert vanilla.predict_independent(0, dataset.blocks[0]).shape == (40,)
    assert vanilla.predict_collaborative(dataset.blocks).shape == (40,)

    with pytest.raises(ConfigError):
        baseline_train("oracle", dataset, config, optimizer, 5, seed=0)


def test_vanilla_vfl_needs_aligned_samples():
    dataset = create_test_dataset(n=30, overlap=0.0)
    config = ModelConfig(embed_dim=3)
    with pytest.raises(ValidationError):
        baseline_train("vanilla_vfl", dataset, config, OptimizerSpec(batch_size=4), 3, seed=0)


def test_missing_sweep_table_shape():
    config = create_test_run_config()
    table = run_missing_sweep(SweepSpec.from_config(config))

    assert list(table.columns) == SWEEP_COLUMNS
    assert len(table) == 2 * 1 * 3 * 3, "grid x seeds x methods x (two clients + collaborative)"
    assert set(table["method"]) == {"xvfl", "standalone", "vanilla_vfl"}
    assert table["accuracy"].between(0.0, 1.0).all()
    assert set(table.loc[table["mode"] == "collaborative", "client"]) == {-1}


def test_sweeps_are_deterministic():
    config = create_test_run_config({"sweep": {"missing_grid": [0.5], "methods": ["xvfl"]}})
    first = run_missing_sweep(SweepSpec.from_config(config))
    second = run_missing_sweep(SweepSpec.from_config(config))
    pd.testing.assert_frame_equal(first, second)


def test_overlap_sweep_uses_overlap_grid():
    config = create_test_run_config({"sweep": {"methods": ["standalone"]}})
    table = run_overlap_sweep(SweepSpec.from_config(config))
    assert sorted(table["overlap_ratio"].unique()) == [0.4, 0.8]
    assert set(table["missing_rate"]) == {0.5}


def test_imbalance_run_reports_per_client_gaps():
    config = create_test_run_config({"data": {"overlap_ratio": 0.2}, "sweep": {"methods": ["xvfl", "standalone"]}})
    table = run_imbalance(SweepSpec.from_config(config))
    assert set(table["imbalance"]) == {"0.8/0.2"}
    gaps = imbalance_gaps(table)
    assert set(gaps["method"]) == {"xvfl", "standalone"}
    assert gaps["gap"].abs().le(1.0).all()


def test_summarize_uses_population_std():
    table = create_test_table({"xvfl": ([0.5, 0.7], 0.9)}, seeds=(0, 1))
    table.loc[(table["seed"] == 1) & (table["mode"] == "collaborative"), "accuracy"] = 0.7
    summary = summarize(table)
    collaborative = summary[summary["mode"] == "collaborative"].iloc[0]
    assert collaborative["mean"] == pytest.approx(0.8)
    assert collaborative["std"] == pytest.approx(0.1)
    assert collaborative["n"] == 2

    with pytest.raises(ValidationError):
        summarize(table.iloc[0:0])


def test_gap_summary_per_method():
    gaps = gap_summary(create_test_table(GOOD_RESULTS), 0.9).set_index("method")
    assert gaps.loc["xvfl", "gap"] == pytest.approx(0.02)
    assert gaps.loc["standalone", "gap"] == pytest.approx(0.20)
    assert gaps.loc["vanilla_vfl", "independent"] == pytest.approx(0.30)
    with pytest.raises(ValidationError):
        gap_summary(create_test_table(GOOD_RESULTS), 0.5)


def test_directional_checks_pass_and_fail():
    missing = create_test_table(GOOD_RESULTS)
    imbalance = create_test_table(
        {"xvfl": ([0.80, 0.78], 0.8), "standalone": ([0.80, 0.50], 0.7)}, sweep="imbalance", missing_rate=0.5
    )
    results = {check.name: check.passed for check in directional_checks(missing, imbalance)}
    assert results == {"independent_superiority": True, "gap_closing": True, "imbalance_gap": True}

    reversed_results = {
        "xvfl": ([0.50, 0.50], 0.90),
        "standalone": ([0.52, 0.52], 0.60),
    }
    failing = {check.name: check.passed for check in directional_checks(create_test_table(reversed_results))}
    assert failing["independent_superiority"] is False
    assert failing["gap_closing"] is False
    assert failing["imbalance_gap"] is None, "not evaluable without an imbalance table"


def test_emit_report_is_byte_identical(tmp_path):
    table = create_test_table(GOOD_RESULTS)
    first_csv, first_json = emit_report(table, str(tmp_path / "a"), "missing", "h", {"gap_missing_rate": 0.9})
    second_csv, second_json = emit_report(table, str(tmp_path / "b"), "missing", "h", {"gap_missing_rate": 0.9})

    assert first_csv.name == "missing.csv" and first_json.name == "missing_summary.json"
    assert first_csv.parent.name == "reports"
    assert first_csv.read_bytes() == second_csv.read_bytes()
    assert first_json.read_bytes() == second_json.read_bytes()
    assert first_csv.read_text(encoding="utf-8").splitlines()[0] == ",".join(SWEEP_COLUMNS)


def test_emit_report_rejects_empty_results(tmp_path):
    with pytest.raises(ValidationError):
        emit_report(pd.DataFrame(columns=SWEEP_COLUMNS), str(tmp_path), "missing")


def test_evaluations_to_target_hit_and_extrapolation():
    means = pd.DataFrame({"T": [10, 100], "avg_grad_norm_sq": [1.0, 0.1], "grad_evals": [10.0, 100.0]})
    hit = evaluations_to_target(means, 0.5, -1.0, 0.0)
    assert hit == {"T": 100, "grad_evals": 100.0, "extrapolated": False}

    # log v = log 10 − log T reaches 0.01 at T = 1000
    extrapolated = evaluations_to_target(means, 0.01, -1.0, math.log(10.0))
    assert extrapolated["extrapolated"] is True
    assert extrapolated["T"] == pytest.approx(1000.0)
    assert extrapolated["grad_evals"] == pytest.approx(1000.0)

    flat = evaluations_to_target(means, 0.01, 0.0, 0.0)
    assert flat["grad_evals"] == math.inf


def test_convergence_study_on_small_xvfl_problem():
    config = create_test_run_config({"convergence": {"problem": "xvfl", "t_exponents": [2, 3], "seeds": 1}})
    report = run_convergence_study(config)
    assert len(report.rows) == 2 * 2 * 1
    assert set(report.rows["optimizer"]) == {"sgd", "page"}
    assert set(report.slopes) == {"sgd", "page"}


def test_search_lambdas_covers_grid():
    config = create_test_run_config({"optimizer": {"steps": 2}})
    best, table = search_lambdas(config, "bank", seed=0)
    grid = LAMBDA_GRIDS["bank"]
    assert len(table) == len(grid["lambda1"]) * len(grid["lambda2"])
    assert best[0] in grid["lambda1"] and best[1] in grid["lambda2"]
    assert table["accuracy"].max() == pytest.approx(
        table[(table["lambda1"] == best[0]) & (table["lambda2"] == best[1])]["accuracy"].iloc[0]
    )

    with pytest.raises(ConfigError):
        search_lambdas(config, "imagenet")


def test_completion_ablation_rows():
    config = create_test_run_config()
    table = run_completion_ablation(config, seed=0)
    assert list(table.columns) == ["seed", "client", "missing_rate", "n_rows", "completed", "zero_fill", "difference"]
    assert set(table["client"]) <= {0, 1}
    assert len(table) >= 1
    assert np.allclose(table["difference"], table["completed"] - table["zero_fill"])
    assert (table["n_rows"] > 0).all()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
