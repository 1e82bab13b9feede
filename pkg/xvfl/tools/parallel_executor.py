#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Parallel Sweep Executor

Runs independent sweep cells concurrently using asyncio worker threads.
Each cell is deterministic on its own; results come back sorted by cell key
so the output does not depend on completion order.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Tuple

from ..config import RUNTIME

logger = logging.getLogger(__name__)


@dataclass
class SweepTask:
    """One sweep cell"""
    task_id: str
    kind: str  # 'missing', 'overlap', 'imbalance', 'convergence', ...
    key: Tuple[Any, ...]  # sort key of the cell
    fn: Callable[..., Any]
    kwargs: Dict[str, Any] = field(default_factory=dict)


@dataclass
class TaskResult:
    """Result of a single cell"""
    task_id: str
    kind: str
    key: Tuple[Any, ...]
    success: bool
    result: Any = None
    error: Optional[str] = None
    exception: Optional[BaseException] = None
    duration_seconds: float = 0.0


@dataclass
class BatchResult:
    """Results of one executor run"""
    total_tasks: int
    completed: int
    failed: int
    results: List[TaskResult] = field(default_factory=list)
    total_duration_seconds: float = 0.0

    def success_rate(self) -> float:
        if self.total_tasks == 0:
            return 0.0
        return (self.completed / self.total_tasks) * 100

    def by_kind(self) -> Dict[str, List[TaskResult]]:
        grouped: Dict[str, List[TaskResult]] = {}
        for result in self.results:
            grouped.setdefault(result.kind, []).append(result)
        return grouped

    def first_error(self) -> Optional[BaseException]:
        for result in self.results:
            if not result.success:
                return result.exception
        return None


class ParallelExecutor:
    """Executes sweep cells with at most max_workers running at once"""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max_workers if max_workers is not None else RUNTIME.DEFAULT_THREADS
        if self.max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {self.max_workers}")

    async def execute_all(
        self,
        tasks: List[SweepTask],
        progress_callback: Optional[Callable[[int, int], None]] = None
    ) -> BatchResult:
        """
        Execute all tasks

        Args:
            tasks: Sweep cells
            progress_callback: Optional callback(completed, total)

        Returns:
            BatchResult with results sorted by cell key
        """
        start_time = datetime.now()
        semaphore = asyncio.Semaphore(self.max_workers)
        done = 0

        async def run(task: SweepTask) -> TaskResult:
            nonlocal done
            async with semaphore:
                started = datetime.now()
                try:
                    if self.max_workers == 1:
                        value = task.fn(**task.kwargs)
                    else:
                        value = await asyncio.to_thread(task.fn, **task.kwargs)
                    result = TaskResult(task.task_id, task.kind, task.key, True, result=value)
                except Exception as e:
                    logger.error(f"Cell {task.task_id} failed: {e}")
                    result = TaskResult(task.task_id, task.kind, task.key, False, error=str(e), exception=e)
                result.duration_seconds = (datetime.now() - started).total_seconds()
                done += 1
                logger.info(f"Cell {task.task_id} finished ({done}/{len(tasks)})")
                if progress_callback:
                    progress_callback(done, len(tasks))
                return result

        results = await asyncio.gather(*[run(task) for task in tasks])
        results = sorted(results, key=lambda r: r.key)
        completed = sum(1 for r in results if r.success)
        return BatchResult(
            total_tasks=len(tasks),
            completed=completed,
            failed=len(results) - completed,
            results=results,
            total_duration_seconds=(datetime.now() - start_time).total_seconds(),
        )

    def run(
        self,
        tasks: List[SweepTask],
        progress_callback: Optional[Callable[[int, int], None]] = None
    ) -> BatchResult:
        """Synchronous wrapper around execute_all"""
        return asyncio.run(self.execute_all(tasks, progress_callback))
