#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
convergence Command

Runs SGD and PAGE over the T grid and reports the log-log slope of the
average squared gradient norm and the evaluations needed to reach the target.
"""

import asyncio
from typing import Any, Dict, List

from ..config import config_hash
from ..tools.experiments import emit_report, run_convergence_study
from .base_command import BaseCommand, validate_args


class ConvergenceCommand(BaseCommand):
    """Command: convergence"""

    def get_name(self) -> str:
        return "convergence"

    def get_description(self) -> str:
        return "SGD vs PAGE stationarity decay over a grid of horizons"

    def _create_parser(self):
        parser = self._new_parser("""
Examples:
  xvfl run cfg.yaml convergence
  xvfl run cfg.yaml convergence --optimizer page
  xvfl run cfg.yaml convergence --set convergence.problem=xvfl --set "convergence.t_exponents=[5, 6, 7]"
            """)
        parser.add_argument(
            '--optimizer',
            action='append',
            choices=['sgd', 'page'],
            default=None,
            help='Optimizer to study; repeatable (default: convergence.optimizers)'
        )
        return parser

    @validate_args
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """Execute convergence command"""
        parsed = self.parse_args(args)
        config = self.load_config(parsed)
        report = await asyncio.to_thread(run_convergence_study, config, parsed.optimizer)
        csv_path, json_path = emit_report(
            report, str(self.resolve_path(config.runtime.out_dir)), "convergence", config_hash(config)
        )

        rows = []
        for kind, slope in sorted(report.slopes.items()):
            target = report.evaluations_to_target[kind]
            rows.append({
                "optimizer": kind,
                "slope": f"{slope:.3f}",
                "evals_to_target": f"{target['grad_evals']:.4g}",
                "extrapolated": str(target["extrapolated"]),
            })
        return self.format_success(
            f"Convergence study finished: {len(report.rows)} cells",
            data={"csv": str(csv_path), "summary": str(json_path), "rows": rows},
        )
