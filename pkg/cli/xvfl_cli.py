#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
xvfl CLI

    xvfl run CONFIG <command> [--seed N] [--out-dir DIR] [--threads N]
                              [--set section.key=value ...] [--log-level LEVEL]
    xvfl commands

Exit codes: 0 success, 1 failure, 2 config error, 3 divergence.
"""

import asyncio
import sys
from typing import Any, Dict, List

import click
from rich.console import Console
from rich.table import Table

from xvfl import __version__
from xvfl.xvfl_runner import XVFLRunner

console = Console()
error_console = Console(stderr=True)


def render_rows(title: str, rows: List[Dict[str, Any]]) -> None:
    if not rows:
        return
    table = Table(title=title)
    columns = list(rows[0].keys())
    for column in columns:
        table.add_column(str(column))
    for row in rows:
        table.add_row(*[str(row.get(column, "")) for column in columns])
    console.print(table)


@click.group()
@click.version_option(__version__, prog_name="xvfl")
def cli():
    """Vertical federated learning simulator with feature completion"""


@cli.command(
    context_settings={"ignore_unknown_options": True, "allow_extra_args": True, "help_option_names": []}
)
@click.argument("config", type=click.Path())
@click.argument("command")
@click.argument("args", nargs=-1, type=click.UNPROCESSED)
def run(config: str, command: str, args: tuple):
    """Run COMMAND with the run config CONFIG"""
    runner = XVFLRunner()
    result = asyncio.run(runner.handle_command(command, [config, *args]))

    if result.get("success"):
        data = result.get("data") or {}
        console.print(f"[green]✓[/green] {result.get('message', '')}")
        render_rows(command, data.get("rows", []))
        for key in ("csv", "summary", "checkpoint", "round_log", "manifest", "predictions"):
            if key in data:
                console.print(f"  {key}: {data[key]}")
    else:
        error_console.print(f"[red]✗[/red] {result.get('error', 'unknown error')}")
    sys.exit(result.get("exit_code", 0 if result.get("success") else 1))


@cli.command("commands")
def list_commands():
    """List the run subcommands"""
    table = Table(title="xvfl run commands")
    table.add_column("command")
    table.add_column("aliases")
    table.add_column("description")
    for entry in XVFLRunner().list_commands():
        table.add_row(entry["name"], ", ".join(entry["aliases"]), entry["description"])
    console.print(table)


def main():
    cli()


if __name__ == "__main__":
    main()
