#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
infer Command

Batch inference: loads a checkpoint and writes one predicted class per row of
the input CSV.
"""

import asyncio
from typing import Any, Dict, List, Optional

from ..config import RunConfig
from ..errors import ConfigError
from ..tools.base_tool import BaseTool
from ..tools.inference import predict_blocks_from_csv
from ..tools.models import load_checkpoint
from .base_command import BaseCommand, validate_args


class PredictionWriter(BaseTool):
    def __init__(self, output_dir: str):
        super().__init__(tool_name="infer", output_dir=output_dir)

    def write(self, filename: str, frame) -> str:
        return str(self._save_table(filename, frame, ["row_id", "prediction"]))


def run_inference(config: RunConfig, checkpoint: str, input_csv: str, out_dir: str, expected_hash: Optional[str]) -> Dict[str, Any]:
    section = config.inference
    bundle = load_checkpoint(checkpoint, expected_hash=expected_hash)
    if section.client >= bundle.k:
        raise ConfigError(f"inference.client={section.client} but the checkpoint has {bundle.k} clients")
    predictions = predict_blocks_from_csv(bundle, input_csv, section.mode, section.client)
    path = PredictionWriter(out_dir).write(section.output_csv, predictions)
    return {"predictions": path, "rows": len(predictions), "mode": section.mode}


class InferCommand(BaseCommand):
    """Command: infer"""

    def get_name(self) -> str:
        return "infer"

    def get_description(self) -> str:
        return "Predict classes for a CSV of client feature blocks"

    def _create_parser(self):
        parser = self._new_parser("""
Examples:
  xvfl run cfg.yaml infer --set inference.checkpoint=output/xvfl/train/checkpoints/final.json \\
      --set inference.input_csv=blocks.csv
  xvfl run cfg.yaml infer --set inference.mode=independent_with_missing --set inference.client=1

Input columns: c{i}_f{j} features, optional c{i}_m{j} masks (1 = absent), optional row_id.
            """)
        parser.add_argument(
            '--check-hash',
            default=None,
            help='Reject checkpoints whose stored config hash differs'
        )
        return parser

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute infer command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        section = config.inference
        if not section.checkpoint:
            raise ConfigError("inference.checkpoint is required for infer")
        if not section.input_csv:
            raise ConfigError("inference.input_csv is required for infer")

        result = await asyncio.to_thread(
            run_inference,
            config,
            str(self.resolve_path(section.checkpoint)),
            str(self.resolve_path(section.input_csv)),
            str(self.resolve_path(config.runtime.out_dir)),
            parsed.check_hash,
        )
        return self.format_success(f"Predicted {result['rows']} rows in {result['mode']} mode", data=result)
