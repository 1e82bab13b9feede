#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Training Protocol

Round-based training: each optimizer step samples one mixed batch, runs one
cut-layer round (embeddings up, gradients down) and updates θ. Rounds are
counted in the message ledger; RoundLog rows, checkpoints and the run
manifest are written through TrainingArtifacts.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import TRAIN, OptimizerSection
from ..errors import ConfigError, DivergenceError, ValidationError
from .base_tool import BaseTool
from .dataset import VerticalDataset
from .losses import LossConfig
from .message_ledger import MessageLedger
from .models import ModelBundle, save_checkpoint
from .objectives import XVFLObjective
from .optim import (
    OptimizerSpec,
    PageParams,
    RngStreams,
    StepRecord,
    estimate_constants,
    run_optimizer,
    theorem_defaults,
)

logger = logging.getLogger(__name__)

ROUND_LOG_COLUMNS = [
    "round", "loss", "grad_norm_sq", "branch", "grad_evals",
    "decision", "dsalign1", "dsalign2", "bytes_up", "bytes_down",
]


@dataclass
class RoundLog:
    """One communication round (= one optimizer step)"""
    round: int
    loss: float
    grad_norm_sq: float
    branch: str
    grad_evals: int
    decision: float
    dsalign1: float
    dsalign2: float
    bytes_up: int
    bytes_down: int
    wall_time: float = 0.0
    terms: Dict[str, float] = field(default_factory=dict)

    def to_row(self) -> Dict[str, Any]:
        """Metric columns only; wall time stays out of metrics files"""
        row = asdict(self)
        return {column: row[column] for column in ROUND_LOG_COLUMNS}


@dataclass
class Topology:
    """Who holds what: k clients with feature widths dᵢ, server with labels and h"""
    k: int
    client_dims: List[int]
    n_classes: int
    server_holds_labels: bool = True

    def validate(self) -> "Topology":
        if self.k < 1:
            raise ConfigError(f"Topology needs k >= 1, got {self.k}")
        if len(self.client_dims) != self.k or any(d < 1 for d in self.client_dims):
            raise ConfigError(f"Topology dims {self.client_dims} do not fit k={self.k}")
        return self

    @classmethod
    def from_dataset(cls, dataset: VerticalDataset) -> "Topology":
        return cls(k=dataset.k, client_dims=dataset.client_dims, n_classes=dataset.n_classes).validate()


def resolve_optimizer(
    section: OptimizerSection,
    batch_size: int,
    objective=None,
    seed: int = 0,
    T: Optional[int] = None
) -> OptimizerSpec:
    """
    Turn the optimizer config section into an OptimizerSpec

    In auto mode the constants are estimated on the objective and the
    theorem rules pick η (and b, b′, p for PAGE). A PAGE b larger than the
    training pool is capped at the pool size.
    """
    section.validate()
    T = section.steps if T is None else T
    if section.auto:
        if objective is None:
            raise ConfigError("optimizer.auto needs an objective to estimate constants on")
        estimates = estimate_constants(objective, objective.initial_theta(), RngStreams(seed), pilot_batch=batch_size)
        sgd, page = theorem_defaults(
            section.target_eps, estimates.beta_hat, estimates.sigma_hat, estimates.delta0_hat, max(T, 1)
        )
        if section.kind == "sgd":
            return OptimizerSpec(kind="sgd", eta=sgd.eta, batch_size=batch_size).validate()
        if page.b > objective.n_samples:
            logger.warning(f"PAGE b={page.b} exceeds the pool of {objective.n_samples}; capping")
            page = PageParams.auto(eta=page.eta, b=objective.n_samples)
        return OptimizerSpec(kind="page", eta=page.eta, batch_size=batch_size, page=page).validate()

    if section.kind == "sgd":
        return OptimizerSpec(kind="sgd", eta=section.eta, batch_size=batch_size).validate()
    page = PageParams.auto(eta=section.eta, b=section.page_b, b_prime=section.page_b_prime)
    if section.page_p is not None:
        page = PageParams(eta=page.eta, b=page.b, b_prime=page.b_prime, p=section.page_p).validate()
    return OptimizerSpec(kind="page", eta=section.eta, batch_size=batch_size, page=page).validate()


def checkpoint_cadence(T: int) -> int:
    return max(1, T // TRAIN.CHECKPOINTS_PER_RUN)


def train(
    dataset: VerticalDataset,
    bundle: ModelBundle,
    loss_config: LossConfig,
    optimizer: OptimizerSpec,
    T: int,
    seed: int,
    checkpoint_dir: Optional[str] = None,
    ledger: Optional[MessageLedger] = None,
    config_hash: str = ""
) -> Tuple[ModelBundle, List[RoundLog]]:
    """
    Run T rounds of X-VFL training

    Args:
        dataset: Training pool (aligned and non-aligned samples)
        bundle: Initial parameters; not modified
        loss_config: λ weights and self-input switch
        optimizer: SGD or PAGE spec
        T: Number of rounds
        seed: Master seed of the batch / coin streams
        checkpoint_dir: Writes round_XXXXXX.json every max(1, T // 20) rounds
        ledger: Message ledger to record into (a fresh one when None)
        config_hash: Stamped into checkpoints

    Returns:
        (trained bundle, RoundLog list of length T)

    Raises:
        DivergenceError: Non-finite loss or gradient; carries the last good θ
            and the logs so far (also written as last_good.json)
    """
    if T < 0:
        raise ConfigError(f"T must be >= 0, got {T}")
    Topology.from_dataset(dataset)
    if dataset.client_dims != bundle.client_dims:
        raise ValidationError(f"Dataset dims {dataset.client_dims} do not match model dims {bundle.client_dims}")
    trained = bundle.copy()
    if T == 0:
        return trained, []

    ledger = ledger if ledger is not None else MessageLedger(dataset.k)
    objective = XVFLObjective(dataset, bundle, loss_config, ledger)
    cadence = checkpoint_cadence(T)
    logs: List[RoundLog] = []
    clock = [time.perf_counter()]

    def on_step(t: int, theta: np.ndarray, record: StepRecord) -> None:
        breakdown = objective.last_breakdown
        if breakdown is None or not math.isfinite(breakdown.loss):
            raise DivergenceError(f"Non-finite loss at round {t}", step=t, last_good_theta=theta.copy())
        summary = ledger.round_summary(t)
        now = time.perf_counter()
        logs.append(RoundLog(
            round=t,
            loss=breakdown.loss,
            grad_norm_sq=record.grad_norm_sq,
            branch=record.branch,
            grad_evals=record.grad_evals,
            decision=breakdown.decision,
            dsalign1=breakdown.dsalign1,
            dsalign2=breakdown.dsalign2,
            bytes_up=summary["bytes_up"],
            bytes_down=summary["bytes_down"],
            wall_time=now - clock[0],
            terms=dict(breakdown.terms),
        ))
        clock[0] = now
        if checkpoint_dir is not None and t % cadence == 0:
            trained.load_flat(theta)
            save_checkpoint(trained, str(Path(checkpoint_dir) / f"round_{t:06d}.json"), config_hash)

    try:
        theta, _ = run_optimizer(objective, objective.initial_theta(), optimizer, T, RngStreams(seed), on_step)
    except DivergenceError as e:
        logger.error(f"Training diverged at round {e.step}: {e}")
        last_good = e.last_good_theta if e.last_good_theta is not None else objective.initial_theta()
        if checkpoint_dir is not None:
            trained.load_flat(last_good)
            save_checkpoint(trained, str(Path(checkpoint_dir) / "last_good.json"), config_hash)
        raise DivergenceError(str(e), step=e.step, last_good_theta=last_good, logs=logs)

    if not np.all(np.isfinite(theta)):
        raise DivergenceError("Non-finite parameters after the last round", step=T, logs=logs)
    trained.load_flat(theta)
    if checkpoint_dir is not None:
        save_checkpoint(trained, str(Path(checkpoint_dir) / "final.json"), config_hash)
    logger.info(f"Trained {T} rounds: final batch loss {logs[-1].loss:.4f}")
    return trained, logs


def round_log_frame(logs: Sequence[RoundLog]) -> pd.DataFrame:
    return pd.DataFrame([log.to_row() for log in logs], columns=ROUND_LOG_COLUMNS)


def write_round_log(logs: Sequence[RoundLog], path: str) -> Path:
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    round_log_frame(logs).to_csv(output_path, index=False, float_format="%.10g", lineterminator="\n")
    return output_path


def build_manifest(
    config: Dict[str, Any],
    seed: int,
    config_hash: str,
    dataset: Optional[VerticalDataset] = None,
    extra: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    manifest = {
        "config": config,
        "seed": seed,
        "config_hash": config_hash,
        "dataset_checksum": dataset.checksum() if dataset is not None else None,
        "dataset": dataset.manifest() if dataset is not None else None,
    }
    manifest.update(extra or {})
    return manifest


class TrainingArtifacts(BaseTool):
    """Files of one training run: checkpoints, RoundLog CSV, manifest"""

    def __init__(self, output_dir: str):
        super().__init__(tool_name="train", output_dir=output_dir)

    @property
    def checkpoint_dir(self) -> Path:
        return self.output_dir / "checkpoints"

    def write_round_log(self, logs: Sequence[RoundLog]) -> Path:
        return self._save_table("round_log.csv", round_log_frame(logs), ROUND_LOG_COLUMNS)

    def write_manifest(self, manifest: Dict[str, Any]) -> Path:
        return self._save_result("manifest.json", manifest)

    def write_ledger_summary(self, ledger: MessageLedger) -> Path:
        totals: Dict[str, int] = {}
        for t in range(ledger.rounds()):
            for key, value in ledger.round_summary(t).items():
                totals[key] = totals.get(key, 0) + value
        return self._save_result("traffic.json", {"rounds": ledger.rounds(), "bytes": totals, "audit_passed": ledger.audit()})


def write_manifest(path: str, manifest: Dict[str, Any]) -> Path:
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
    return output_path
