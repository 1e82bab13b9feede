#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Test the run subcommands and the CLI

Exit codes, written artifacts and reproducibility of report files.
"""

import asyncio
import json
import sys
from pathlib import Path

import pytest
from click.testing import CliRunner

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from cli.xvfl_cli import cli
from tests.builders import create_test_config
from xvfl.config import load_run_config
from xvfl.errors import ConfigError
from xvfl.xvfl_runner import XVFLRunner


def run_command(name, args):
    runner = XVFLRunner(log_level="WARNING")
    return asyncio.run(runner.handle_command(name, args))


def invoke(args):
    return CliRunner().invoke(cli, args)


def test_train_writes_artifacts(tmp_path):
    config = create_test_config(tmp_path)
    out_dir = tmp_path / "out"
    result = run_command("train", [config, "--out-dir", str(out_dir)])

    assert result["success"], result.get("error")
    assert result["exit_code"] == 0
    data = result["data"]
    assert data["rounds"] == 4
    for key in ("checkpoint", "round_log", "traffic", "manifest"):
        assert Path(data[key]).exists(), f"missing {key}"

    manifest = json.loads(Path(data["manifest"]).read_text(encoding="utf-8"))
    assert manifest["seed"] == 0
    assert manifest["dataset_checksum"]
    traffic = json.loads(Path(data["traffic"]).read_text(encoding="utf-8"))
    assert traffic["rounds"] == 4 and traffic["audit_passed"] is True


def test_missing_config_file_is_a_config_error(tmp_path):
    result = run_command("train", [str(tmp_path / "absent.yaml")])
    assert not result["success"]
    assert result["exit_code"] == 2


def test_unknown_key_is_a_config_error(tmp_path):
    config = create_test_config(tmp_path, {"optimizer": {"momentum": 0.9}})
    result = run_command("train", [config])
    assert result["exit_code"] == 2
    assert "optimizer.momentum" in result["error"]


def test_unknown_command_and_bad_flags(tmp_path):
    config = create_test_config(tmp_path)
    assert run_command("fly", [config])["exit_code"] == 2
    assert run_command("train", [config, "--threads", "many"])["exit_code"] == 2


def test_help_is_a_success(tmp_path):
    result = run_command("missing-sweep", ["--help"])
    assert result["success"]
    assert "Examples:" in result["message"]


def test_overrides_and_flags_apply(tmp_path):
    config = create_test_config(tmp_path)
    loaded = load_run_config(config, overrides=["optimizer.eta=1e-3", "data.n_clients=3"], seed=7, threads=2)
    assert loaded.optimizer.eta == pytest.approx(1e-3)
    assert loaded.data.n_clients == 3
    assert loaded.runtime.seed == 7 and loaded.runtime.threads == 2

    with pytest.raises(ConfigError):
        load_run_config(config, overrides=["optimizer.eta=fast"])
    with pytest.raises(ConfigError):
        load_run_config(config, overrides=["eta=0.1"])


def test_aliases_share_handlers():
    runner = XVFLRunner(log_level="WARNING")
    assert runner.commands["missing"]["handler"] is runner.commands["missing-sweep"]["handler"]
    names = [entry["name"] for entry in runner.list_commands()]
    assert len(names) == len(set(names)) == 8
    missing = next(entry for entry in runner.list_commands() if entry["name"] == "missing-sweep")
    assert missing["aliases"] == ["missing"]


def test_cli_exit_codes(tmp_path):
    config = create_test_config(tmp_path)
    out_dir = str(tmp_path / "out")

    ok = invoke(["run", config, "train", "--out-dir", out_dir])
    assert ok.exit_code == 0, ok.output

    assert invoke(["run", str(tmp_path / "absent.yaml"), "train"]).exit_code == 2
    assert invoke(["run", config, "fly"]).exit_code == 2

    diverged = invoke(["run", config, "train", "--out-dir", out_dir, "--set", "optimizer.eta=1e300"])
    assert diverged.exit_code == 3
    assert (Path(out_dir) / "train" / "checkpoints" / "last_good.json").exists()


def test_cli_lists_commands():
    result = invoke(["commands"])
    assert result.exit_code == 0
    for name in ("missing-sweep", "overlap-sweep", "imbalance", "convergence", "train", "infer"):
        assert name in result.output


def test_missing_sweep_files_are_reproducible(tmp_path):
    config = create_test_config(tmp_path, {"sweep": {"methods": ["xvfl", "standalone"]}})
    first = invoke(["run", config, "missing-sweep", "--out-dir", str(tmp_path / "a")])
    second = invoke(["run", config, "missing-sweep", "--out-dir", str(tmp_path / "b"), "--threads", "2"])
    assert first.exit_code == 0, first.output
    assert second.exit_code == 0, second.output

    for name in ("missing_sweep.csv", "missing_sweep_summary.json"):
        a = (tmp_path / "a" / "reports" / name).read_bytes()
        b = (tmp_path / "b" / "reports" / name).read_bytes()
        assert a == b, f"{name} differs between runs"


def test_infer_round_trip(tmp_path):
    config = create_test_config(tmp_path)
    out_dir = tmp_path / "out"
    trained = run_command("train", [config, "--out-dir", str(out_dir)])
    assert trained["success"], trained.get("error")

    input_csv = tmp_path / "rows.csv"
    input_csv.write_text("row_id,c0_f0,c0_f1,c0_f2,c1_f0,c1_f1,c1_f2\n7,0.1,0.2,0.3,0.4,0.5,0.6\n", encoding="utf-8")
    result = run_command("infer", [
        config, "--out-dir", str(out_dir),
        "--set", f"inference.checkpoint={trained['data']['checkpoint']}",
        "--set", f"inference.input_csv={input_csv}",
    ])
    assert result["success"], result.get("error")
    predictions = Path(result["data"]["predictions"]).read_text(encoding="utf-8").splitlines()
    assert predictions[0] == "row_id,prediction"
    assert predictions[1].startswith("7,")

    missing = run_command("infer", [config])
    assert missing["exit_code"] == 2


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
