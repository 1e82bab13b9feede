#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Sweep Commands

missing-sweep, overlap-sweep and imbalance: train every method over a grid of
seeds and write the long-format results table plus its JSON summary.
"""

import asyncio
import logging
from typing import Any, Dict, List

import numpy as np

from ..tools.experiments import (
    SweepSpec,
    directional_checks,
    emit_report,
    gap_summary,
    imbalance_gaps,
    run_imbalance,
    run_missing_sweep,
    run_overlap_sweep,
    summarize,
)
from .base_command import BaseCommand, validate_args

logger = logging.getLogger(__name__)


def _summary_rows(table) -> List[Dict[str, Any]]:
    """Mean ± std rows for console rendering"""
    summary = summarize(table)
    rows = []
    for record in summary.to_dict(orient="records"):
        rows.append({
            "method": record["method"],
            "missing_rate": record["missing_rate"],
            "overlap_ratio": record["overlap_ratio"],
            "mode": record["mode"],
            "client": record["client"],
            "accuracy": f"{record['mean']:.4f} ± {record['std']:.4f}",
        })
    return rows


class MissingSweepCommand(BaseCommand):
    """Command: missing-sweep"""

    def get_name(self) -> str:
        return "missing-sweep"

    def get_description(self) -> str:
        return "Accuracy of every method across the missing-rate grid"

    def _create_parser(self):
        return self._new_parser("""
Examples:
  xvfl run config/xvfl_config.example.yaml missing-sweep
  xvfl run cfg.yaml missing-sweep --seed 3 --threads 4
  xvfl run cfg.yaml missing-sweep --set data.n_clients=4
            """)

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute missing-sweep command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        spec = SweepSpec.from_config(config)
        table = await asyncio.to_thread(run_missing_sweep, spec)

        extra: Dict[str, Any] = {"gap_missing_rate": spec.gap_missing_rate}
        if np.any(np.isclose(spec.missing_grid, spec.gap_missing_rate)):
            extra["gaps"] = gap_summary(table, spec.gap_missing_rate).to_dict(orient="records")
        checks = directional_checks(missing_table=table, gap_missing_rate=spec.gap_missing_rate)
        extra["checks"] = [check.__dict__ for check in checks]

        csv_path, json_path = emit_report(
            table, str(self.resolve_path(config.runtime.out_dir)), "missing_sweep", spec.config_hash, extra
        )
        return self.format_success(
            f"Missing-rate sweep finished: {len(table)} rows",
            data={"csv": str(csv_path), "summary": str(json_path), "rows": _summary_rows(table)},
        )


class OverlapSweepCommand(BaseCommand):
    """Command: overlap-sweep"""

    def get_name(self) -> str:
        return "overlap-sweep"

    def get_description(self) -> str:
        return "Accuracy of every method across the overlap-ratio grid"

    def _create_parser(self):
        return self._new_parser("""
Examples:
  xvfl run cfg.yaml overlap-sweep
  xvfl run cfg.yaml overlap-sweep --set sweep.fixed_missing_rate=0.7
            """)

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute overlap-sweep command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        spec = SweepSpec.from_config(config)
        table = await asyncio.to_thread(run_overlap_sweep, spec)
        csv_path, json_path = emit_report(
            table, str(self.resolve_path(config.runtime.out_dir)), "overlap_sweep", spec.config_hash,
            {"fixed_missing_rate": spec.fixed_missing_rate},
        )
        return self.format_success(
            f"Overlap sweep finished: {len(table)} rows",
            data={"csv": str(csv_path), "summary": str(json_path), "rows": _summary_rows(table)},
        )


class ImbalanceCommand(BaseCommand):
    """Command: imbalance"""

    def get_name(self) -> str:
        return "imbalance"

    def get_description(self) -> str:
        return "Per-client independent accuracy under uneven sample ownership"

    def _create_parser(self):
        return self._new_parser("""
Examples:
  xvfl run cfg.yaml imbalance
  xvfl run cfg.yaml imbalance --set "sweep.imbalance_fractions=[0.7, 0.3]"
            """)

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute imbalance command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        spec = SweepSpec.from_config(config)
        table = await asyncio.to_thread(run_imbalance, spec)

        gaps = imbalance_gaps(table)
        mean_gaps = gaps.groupby("method")["gap"].mean().to_dict()
        checks = directional_checks(imbalance_table=table)
        extra = {
            "imbalance_fractions": spec.imbalance_fractions,
            "mean_gap": {method: float(gap) for method, gap in sorted(mean_gaps.items())},
            "checks": [check.__dict__ for check in checks if check.name == "imbalance_gap"],
        }
        csv_path, json_path = emit_report(
            table, str(self.resolve_path(config.runtime.out_dir)), "imbalance", spec.config_hash, extra
        )
        return self.format_success(
            f"Imbalance experiment finished: {len(table)} rows",
            data={"csv": str(csv_path), "summary": str(json_path), "rows": _summary_rows(table)},
        )
