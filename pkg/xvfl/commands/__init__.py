#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Run Subcommands for the X-VFL Simulator
"""

from .sweep_cmd import MissingSweepCommand, OverlapSweepCommand, ImbalanceCommand
from .convergence_cmd import ConvergenceCommand
from .train_cmd import TrainCommand
from .infer_cmd import InferCommand
from .study_cmd import LambdaSearchCommand, CompletionAblationCommand

__all__ = [
    'MissingSweepCommand',
    'OverlapSweepCommand',
    'ImbalanceCommand',
    'ConvergenceCommand',
    'TrainCommand',
    'InferCommand',
    'LambdaSearchCommand',
    'CompletionAblationCommand',
]
