#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Study Commands

lambda-search: grid search of λ₁ / λ₂ over a declared preset.
completion-ablation: XCom-completed vs zero-filled independent predictions.
"""

import asyncio
from typing import Any, Dict, List

from ..config import config_hash
from ..errors import ConfigError
from ..tools.base_tool import BaseTool
from ..tools.experiments import LAMBDA_GRIDS, run_completion_ablation, search_lambdas
from .base_command import BaseCommand, validate_args


class StudyWriter(BaseTool):
    def __init__(self, output_dir: str):
        super().__init__(tool_name="studies", output_dir=output_dir)

    def write(self, name: str, table, payload: Dict[str, Any]):
        csv_path = self._save_table(f"{name}.csv", table)
        json_path = self._save_result(f"{name}_summary.json", payload)
        return str(csv_path), str(json_path)


class LambdaSearchCommand(BaseCommand):
    """Command: lambda-search"""

    def get_name(self) -> str:
        return "lambda-search"

    def get_description(self) -> str:
        return "Pick λ₁, λ₂ from a declared grid by validation accuracy"

    def _create_parser(self):
        parser = self._new_parser(f"""
Examples:
  xvfl run cfg.yaml lambda-search --grid bank
  xvfl run cfg.yaml lambda-search --set sweep.lambda_grid=mimic3

Grids: {', '.join(sorted(LAMBDA_GRIDS))}
            """)
        parser.add_argument('--grid', default=None, help='Preset name (default: sweep.lambda_grid)')
        return parser

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute lambda-search command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        grid = parsed.grid or config.sweep.lambda_grid
        if grid is None:
            raise ConfigError("lambda-search needs --grid or sweep.lambda_grid")

        (lambda1, lambda2), table = await asyncio.to_thread(search_lambdas, config, grid, config.runtime.seed)
        csv_path, json_path = StudyWriter(str(self.resolve_path(config.runtime.out_dir))).write(
            f"lambda_search_{grid}",
            table,
            {"grid": grid, "config_hash": config_hash(config), "best": {"lambda1": lambda1, "lambda2": lambda2}},
        )
        return self.format_success(
            f"Best of {len(table)} candidates: lambda1={lambda1:g}, lambda2={lambda2:g}",
            data={"csv": csv_path, "summary": json_path, "rows": table.to_dict(orient="records")},
        )


class CompletionAblationCommand(BaseCommand):
    """Command: completion-ablation"""

    def get_name(self) -> str:
        return "completion-ablation"

    def get_description(self) -> str:
        return "Independent accuracy with XCom completion vs zero-filled features"

    def _create_parser(self):
        parser = self._new_parser("""
Examples:
  xvfl run cfg.yaml completion-ablation
  xvfl run cfg.yaml completion-ablation --missing-rate 0.7
            """)
        parser.add_argument('--missing-rate', type=float, default=None, help='Default: sweep.fixed_missing_rate')
        return parser

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute completion-ablation command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        if parsed.missing_rate is not None and not 0.0 <= parsed.missing_rate <= 1.0:
            raise ConfigError(f"--missing-rate must be in [0, 1], got {parsed.missing_rate}")

        table = await asyncio.to_thread(run_completion_ablation, config, config.runtime.seed, parsed.missing_rate)
        csv_path, json_path = StudyWriter(str(self.resolve_path(config.runtime.out_dir))).write(
            "completion_ablation",
            table,
            {"config_hash": config_hash(config), "mean_difference": float(table["difference"].mean()) if len(table) else None},
        )
        return self.format_success(
            f"Completion ablation over {len(table)} clients",
            data={"csv": csv_path, "summary": json_path, "rows": table.to_dict(orient="records")},
        )
