"""
Plot-data export for experiment results.

Writes gnuplot-ready ``.dat`` files instead of rendering figures:
- Accuracy grid: one block per hidden layer count, neurons vs mean/std accuracy
- Loss trace: iteration vs total (and data) loss
- Dropout sweep and uncertainty sweep tables
- Back-projected pattern matrices (``plot 'x.dat' matrix with image``)

Columns are whitespace separated; the first line is a ``#`` header naming
them. Blank-line-separated blocks index as gnuplot datasets.
"""

import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..core.attribution import InputPattern

logger = logging.getLogger(__name__)


class PlotDataWriter:
    """Write plot data files into one directory."""

    def __init__(self, out_dir: str):
        """
        Initialize writer.

        Args:
            out_dir: Directory receiving the .dat files
        """
        self.out_dir = out_dir
        self.written: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, f"{name}.dat")

    def _write_blocks(self, name: str, columns: Sequence[str], blocks: Sequence[np.ndarray], titles: Optional[Sequence[str]] = None) -> str:
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            f.write("# " + " ".join(columns) + "\n")
            for b, block in enumerate(blocks):
                if b:
                    f.write("\n\n")
                if titles:
                    f.write(f"# {titles[b]}\n")
                np.savetxt(f, np.atleast_2d(block), fmt="%.10g")
        self.written.append(path)
        logger.debug("wrote %s", path)
        return path

    def accuracy_grid(self, summary: pd.DataFrame, name: str = "accuracy_grid") -> str:
        """One block per (scale, layers): neurons mean_acc std_acc."""
        blocks, titles = [], []
        for (scale, layers), group in summary.groupby(["scale", "layers"], sort=True):
            group = group.sort_values("neurons")
            blocks.append(group[["neurons", "mean_acc", "std_acc"]].to_numpy(dtype=np.float64))
            titles.append(f"scale={scale} layers={layers}")
        return self._write_blocks(name, ["neurons", "mean_acc", "std_acc"], blocks, titles)

    def loss_trace(self, trace: Sequence[float], history: Optional[Dict[str, Sequence[float]]] = None, name: str = "loss_trace") -> str:
        trace = np.asarray(trace, dtype=np.float64)
        columns = [np.arange(1, trace.size + 1, dtype=np.float64), trace]
        header = ["iteration", "total_loss"]
        for key, values in sorted((history or {}).items()):
            columns.append(np.asarray(values, dtype=np.float64))
            header.append(key)
        return self._write_blocks(name, header, [np.column_stack(columns)])

    def table(self, frame: pd.DataFrame, label_column: str, name: str) -> str:
        """Numeric columns of ``frame`` with a 0-based x index; labels go into the header."""
        numeric = frame.drop(columns=[label_column])
        data = np.column_stack([np.arange(len(frame), dtype=np.float64), numeric.to_numpy(dtype=np.float64)])
        header = ["index"] + list(numeric.columns)
        path = self._write_blocks(name, header, [data], [" ".join(str(v) for v in frame[label_column])])
        return path

    def dropout_sweep(self, table: pd.DataFrame, name: str = "dropout_sweep") -> str:
        return self.table(table, "policy", name)

    def uncertainty_sweep(self, table: pd.DataFrame, name: str = "uncertainty_sweep") -> str:
        return self.table(table, "subset", name)

    def pattern_matrix(self, pattern: InputPattern, name: str) -> str:
        """Devectorized pattern as a plain matrix (header-less, for `matrix with image`)."""
        path = self._path(name)
        np.savetxt(path, pattern.matrix_view, fmt="%.10g")
        self.written.append(path)
        return path
