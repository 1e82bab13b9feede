#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Base Tool - shared output handling

Every artifact writer (training runs, sweep reports) keeps its files under
<out_dir>/<tool_name>/ and writes JSON and CSV the same way, so reruns with
the same inputs produce byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Sequence

import pandas as pd

logger = logging.getLogger(__name__)


class BaseTool:
    """Artifact writer rooted at one output directory"""

    def __init__(self, tool_name: str, output_dir: str = "output/xvfl"):
        """
        Args:
            tool_name: Subdirectory name for this tool's files
            output_dir: Output root
        """
        self.tool_name = tool_name
        self.output_dir = Path(output_dir) / tool_name
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(f"Output directory is not writable: {self.output_dir}: {e}")

    def _path(self, filename: str) -> Path:
        return self.output_dir / filename

    def _save_result(self, filename: str, data: Dict[str, Any]) -> Path:
        """JSON with sorted keys and a trailing newline"""
        output_path = self._path(filename)
        with open(output_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write("\n")
        logger.debug(f"Wrote {output_path}")
        return output_path

    def _save_table(self, filename: str, frame: pd.DataFrame, columns: Sequence[str] = ()) -> Path:
        """CSV in a fixed column order; floats written with full precision"""
        output_path = self._path(filename)
        if columns:
            frame = frame.reindex(columns=list(columns))
        frame.to_csv(output_path, index=False, float_format="%.10g", lineterminator="\n")
        logger.debug(f"Wrote {output_path} ({len(frame)} rows)")
        return output_path
