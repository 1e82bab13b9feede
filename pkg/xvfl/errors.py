#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Exception hierarchy for the simulator

Every error raised on purpose by the package derives from XVFLError so the
command layer can map it to a result dict and a process exit code.
"""

from typing import Any, List, Optional


class XVFLError(Exception):
    """Base class for simulator errors"""

    exit_code: int = 1


class ConfigError(XVFLError):
    """Invalid or inconsistent configuration"""

    exit_code = 2


class ValidationError(XVFLError, ValueError):
    """Input data violates an operation's precondition"""


class DimensionError(XVFLError, ValueError):
    """Matrix shapes do not conform"""

    def __init__(self, operation: str, left: Any, right: Any):
        self.operation = operation
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{operation}: shape mismatch {self.left} vs {self.right}")


class LeakError(XVFLError):
    """A raw feature payload was routed to a party that does not own it"""


class DivergenceError(XVFLError):
    """
    Non-finite loss or gradient during training

    Carries the last good parameter vector and the logs recorded so far.
    """

    exit_code = 3

    def __init__(
        self,
        message: str,
        step: int = -1,
        last_good_theta: Optional[Any] = None,
        logs: Optional[List[Any]] = None
    ):
        super().__init__(message)
        self.step = step
        self.last_good_theta = last_good_theta
        self.logs = logs or []
