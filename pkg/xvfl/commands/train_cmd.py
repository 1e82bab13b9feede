#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
train Command

Trains one X-VFL bundle on the configured data regime and writes
checkpoints, the RoundLog CSV, the traffic summary and the run manifest.
"""

import asyncio
import logging
from typing import Any, Dict, List

from ..config import RunConfig, config_hash
from ..errors import DivergenceError
from ..tools.experiments import SweepSpec, prepare_cell
from ..tools.message_ledger import MessageLedger
from ..tools.models import build_bundle
from ..tools.objectives import XVFLObjective
from ..tools.protocol import TrainingArtifacts, build_manifest, resolve_optimizer, train
from .base_command import BaseCommand, validate_args

logger = logging.getLogger(__name__)


def run_training(config: RunConfig, out_dir: str) -> Dict[str, Any]:
    """Train and write every artifact of one run; returns their paths"""
    seed = config.runtime.seed
    digest = config_hash(config)
    data = config.data
    train_ds, _ = prepare_cell(config, seed, data.overlap_ratio, data.missing_rate, data.imbalance)
    spec = SweepSpec.from_config(config)

    bundle = build_bundle(train_ds.client_dims, train_ds.n_classes, spec.model_config, seed)
    objective = XVFLObjective(train_ds, bundle, spec.loss_config) if config.optimizer.auto else None
    optimizer = resolve_optimizer(config.optimizer, config.batch_size(), objective, seed)

    artifacts = TrainingArtifacts(out_dir)
    ledger = MessageLedger(train_ds.k)
    try:
        _, logs = train(
            train_ds, bundle, spec.loss_config, optimizer, config.optimizer.steps, seed,
            checkpoint_dir=str(artifacts.checkpoint_dir), ledger=ledger, config_hash=digest,
        )
    except DivergenceError as e:
        artifacts.write_round_log(e.logs)
        raise

    round_log = artifacts.write_round_log(logs)
    traffic = artifacts.write_ledger_summary(ledger)
    manifest = artifacts.write_manifest(build_manifest(
        config.to_dict(), seed, digest, train_ds,
        extra={"optimizer": {"kind": optimizer.kind, "eta": optimizer.eta, "batch_size": optimizer.batch_size}},
    ))
    return {
        "checkpoint": str(artifacts.checkpoint_dir / "final.json"),
        "round_log": str(round_log),
        "traffic": str(traffic),
        "manifest": str(manifest),
        "final_loss": logs[-1].loss if logs else None,
        "rounds": len(logs),
    }


class TrainCommand(BaseCommand):
    """Command: train"""

    def get_name(self) -> str:
        return "train"

    def get_description(self) -> str:
        return "Train one X-VFL model and write its checkpoint, round log and manifest"

    def _create_parser(self):
        return self._new_parser("""
Examples:
  xvfl run cfg.yaml train
  xvfl run cfg.yaml train --set optimizer.kind=page --set optimizer.auto=true
            """)

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute train command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        result = await asyncio.to_thread(run_training, config, str(self.resolve_path(config.runtime.out_dir)))
        return self.format_success(
            f"Trained {result['rounds']} rounds; checkpoint at {result['checkpoint']}",
            data=result,
        )
