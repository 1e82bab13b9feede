#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
X-VFL Command Runner

Registry of the run subcommands (with aliases) and the dispatcher the CLI
calls into.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List

from .config import RUNTIME
from .commands import (
    CompletionAblationCommand,
    ConvergenceCommand,
    ImbalanceCommand,
    InferCommand,
    LambdaSearchCommand,
    MissingSweepCommand,
    OverlapSweepCommand,
    TrainCommand,
)


def setup_logging(log_level: str = RUNTIME.DEFAULT_LOG_LEVEL) -> logging.Logger:
    """Configure the package logger once: stderr, fixed format"""
    package_logger = logging.getLogger("xvfl")
    package_logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))
    if not package_logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(RUNTIME.LOG_FORMAT))
        package_logger.addHandler(handler)
    return package_logger


class XVFLRunner:
    """Dispatches `xvfl run CONFIG <command>` invocations"""

    def __init__(self, project_root: str = ".", log_level: str = RUNTIME.DEFAULT_LOG_LEVEL):
        self.name = "xvfl"
        self.project_root = Path(project_root)
        self.commands: Dict[str, Dict[str, Any]] = {}
        self.logger = setup_logging(log_level)

        missing = MissingSweepCommand(self)
        overlap = OverlapSweepCommand(self)
        convergence = ConvergenceCommand(self)
        infer = InferCommand(self)
        lambdas = LambdaSearchCommand(self)
        ablation = CompletionAblationCommand(self)
        self._command_instances = {
            'missing-sweep': missing,
            'missing': missing,  # Alias
            'overlap-sweep': overlap,
            'overlap': overlap,  # Alias
            'imbalance': ImbalanceCommand(self),
            'convergence': convergence,
            'conv': convergence,  # Short alias
            'train': TrainCommand(self),
            'infer': infer,
            'predict': infer,  # Alias
            'lambda-search': lambdas,
            'lambdas': lambdas,  # Alias
            'completion-ablation': ablation,
            'ablation': ablation,  # Alias
        }
        self._register_commands()

    def _register_commands(self):
        for cmd_name, cmd_instance in self._command_instances.items():
            self.register_command(
                name=cmd_name,
                description=cmd_instance.get_description(),
                handler=cmd_instance
            )
        self.logger.debug(f"Registered {len(self.commands)} commands")

    def register_command(self, name: str, description: str, handler: Any):
        self.commands[name] = {
            "name": name,
            "description": description,
            "handler": handler
        }

    async def handle_command(self, command_name: str, args: List[str]) -> Dict[str, Any]:
        """
        Run one subcommand

        Args:
            command_name: Registered name or alias
            args: CONFIG path followed by the subcommand's flags

        Returns:
            Command result dict (success, exit_code, message / error, data)
        """
        self.logger.info(f"Command received: {command_name} {' '.join(args)}")
        if command_name not in self.commands:
            error_msg = f"Unknown command: {command_name}"
            self.logger.error(error_msg)
            return {"success": False, "error": error_msg, "exit_code": 2}

        handler = self.commands[command_name]["handler"]
        result = await handler.execute(args)
        if result.get('success'):
            self.logger.info(f"Command succeeded: {command_name}")
        else:
            self.logger.error(f"Command failed: {result.get('error')}")
        return result

    def list_commands(self) -> List[Dict[str, Any]]:
        """Commands with their aliases, one entry per handler"""
        seen = set()
        commands = []
        for cmd_name, cmd in self.commands.items():
            handler_id = id(cmd["handler"])
            if handler_id in seen:
                continue
            seen.add(handler_id)
            aliases = [name for name, c in self.commands.items() if id(c["handler"]) == handler_id]
            commands.append({
                "name": cmd["name"],
                "description": cmd["description"],
                "aliases": [alias for alias in aliases if alias != cmd_name],
            })
        return sorted(commands, key=lambda x: x['name'])
