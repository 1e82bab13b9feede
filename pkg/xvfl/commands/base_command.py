#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Base Command Class for Run Subcommands

Provides argument parsing, config loading and result formatting shared by
every `xvfl run CONFIG <subcommand>` command.
"""

import argparse
import logging
from abc import ABC, abstractmethod
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from ..config import RunConfig, config_hash, load_run_config
from ..errors import ConfigError, XVFLError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1


def validate_args(func: Callable) -> Callable:
    """
    Decorator to handle argument parsing errors consistently

    Catches SystemExit from argparse and converts it to a config-error
    response; simulator errors keep their own exit code, anything else
    maps to a generic failure.
    """
    @wraps(func)
    async def wrapper(self, args: List[str]) -> Dict[str, Any]:
        try:
            return await func(self, args)
        except SystemExit as e:
            if e.code in (0, None):
                return self.format_success(self.parser.format_help())
            return self.format_error(
                f"Invalid arguments. Use 'xvfl run CONFIG {self.get_name()} --help' for usage information.",
                exit_code=ConfigError.exit_code,
            )
        except XVFLError as e:
            return self.format_error(f"{type(e).__name__}: {e}", exit_code=e.exit_code)
        except Exception as e:
            logger.exception(f"Command {self.get_name()} failed")
            return self.format_error(f"Command failed: {str(e)}", exit_code=EXIT_FAILURE)
    return wrapper


class BaseCommand(ABC):
    """Base class for all run subcommands"""

    def __init__(self, runner=None):
        """
        Initialize command

        Args:
            runner: XVFLRunner instance (used for the project root)
        """
        self.runner = runner
        self.parser = self._create_parser()

    @abstractmethod
    def get_name(self) -> str:
        """Return command name (e.g., 'missing-sweep')"""
        pass

    @abstractmethod
    def get_description(self) -> str:
        """Return command description"""
        pass

    @abstractmethod
    def _create_parser(self) -> argparse.ArgumentParser:
        """Create argument parser for this command"""
        pass

    @abstractmethod
    async def execute(self, args: List[str]) -> Dict[str, Any]:
        """
        Execute the command

        Args:
            args: CONFIG path followed by the subcommand's flags

        Returns:
            Result dictionary with success status, exit code and data
        """
        pass

    def _new_parser(self, epilog: str) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog=f"xvfl run CONFIG {self.get_name()}",
            description=self.get_description(),
            epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter
        )
        parser.add_argument('config', help='Run config (YAML or JSON)')
        parser.add_argument('--seed', type=int, default=None, help='Master seed (overrides runtime.seed)')
        parser.add_argument('--out-dir', default=None, help='Output root (overrides runtime.out_dir)')
        parser.add_argument('--threads', type=int, default=None, help='Sweep worker count (overrides runtime.threads)')
        parser.add_argument(
            '--set',
            dest='overrides',
            action='append',
            default=[],
            metavar='SECTION.KEY=VALUE',
            help='Override one config key; repeatable'
        )
        parser.add_argument(
            '--log-level',
            default=None,
            choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
            help='Logging level (overrides runtime.log_level)'
        )
        return parser

    def parse_args(self, args: List[str]) -> argparse.Namespace:
        """
        Parse command arguments

        Raises:
            SystemExit: If parsing fails (caught by validate_args)
        """
        return self.parser.parse_args(args)

    def load_config(self, parsed: argparse.Namespace) -> RunConfig:
        """Resolve the run config from the file, --set overrides and flags"""
        config = load_run_config(
            str(self.resolve_path(parsed.config)),
            overrides=parsed.overrides,
            seed=parsed.seed,
            out_dir=parsed.out_dir,
            threads=parsed.threads,
        )
        level = parsed.log_level or config.runtime.log_level
        logging.getLogger("xvfl").setLevel(getattr(logging, level.upper(), logging.INFO))
        logger.info(f"{self.get_name()}: config {parsed.config} (hash {config_hash(config)})")
        return config

    def format_success(self, message: str, data: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Format success response"""
        result = {
            "success": True,
            "message": message,
            "exit_code": EXIT_OK,
        }
        if data:
            result["data"] = data
        return result

    def format_error(self, error: str, exit_code: int = EXIT_FAILURE) -> Dict[str, Any]:
        """Format error response"""
        return {
            "success": False,
            "error": error,
            "exit_code": exit_code,
        }

    def resolve_path(self, file_path: str) -> Path:
        """
        Resolve file path relative to the runner's project root

        Args:
            file_path: Relative or absolute file path

        Returns:
            Resolved Path object
        """
        path = Path(file_path)
        if not path.is_absolute() and self.runner is not None:
            path = self.runner.project_root / path
        return path
