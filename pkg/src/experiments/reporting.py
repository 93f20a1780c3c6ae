"""
Report Writers

JSON and CSV artifacts of a run:
- report.json: every fold record plus per-permutation and aggregate accuracies
- summary.csv: layers, neurons, scale, mean_acc, std_acc
- run_manifest.json: command, resolved config, seed, version, input hashes

Outputs carry no timestamps or timings, so repeating a run reproduces
its files byte for byte.
"""

import hashlib
import json
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .. import __version__
from .harness import ExperimentReport, summary_frame

logger = logging.getLogger(__name__)

REPORT_FORMAT = "connlab.report"
FLOAT_FORMAT = "%.17g"


def json_safe(obj: Any) -> Any:
    """Convert numpy scalars/arrays to Python values and non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return json_safe(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(doc: Any, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(json_safe(doc), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return path


def write_frame(frame: pd.DataFrame, path: str) -> str:
    """CSV with full-precision floats and LF line endings."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_cv_outputs(reports: Sequence[ExperimentReport], out_dir: str) -> Dict[str, str]:
    """
    Write report.json and summary.csv for one or more CV runs.

    Raises:
        ReportIntegrityError: if an aggregate disagrees with its raw records
    """
    doc = {
        "format": REPORT_FORMAT,
        "version": 1,
        "reports": [r.to_dict() for r in reports],
    }
    paths = {
        "report": write_json(doc, os.path.join(out_dir, "report.json")),
        "summary": write_frame(summary_frame(reports), os.path.join(out_dir, "summary.csv")),
    }
    logger.info("wrote %s and %s", paths["report"], paths["summary"])
    return paths


def hash_file(path: str, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk_size), b""):
            digest.update(block)
    return digest.hexdigest()


def input_hashes(paths: Sequence[str]) -> Dict[str, str]:
    """sha256 of every input file; a directory hashes the files below it in sorted order."""
    out: Dict[str, str] = {}
    for path in paths:
        if os.path.isdir(path):
            for root, dirs, files in os.walk(path):
                dirs.sort()
                for name in sorted(files):
                    full = os.path.join(root, name)
                    key = os.path.join(os.path.basename(os.path.normpath(path)), os.path.relpath(full, path))
                    out[key.replace(os.sep, "/")] = hash_file(full)
        else:
            out[os.path.basename(path)] = hash_file(path)
    return out


def write_run_manifest(
    out_dir: str,
    command: str,
    config: Dict[str, Any],
    seed: Optional[int],
    inputs: Sequence[str] = (),
    outputs: Sequence[str] = (),
) -> str:
    """Record how a run was produced beside its outputs."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": input_hashes(inputs),
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    return write_json(manifest, os.path.join(out_dir, "run_manifest.json"))


def banner(title: str, sections: Dict[str, Any]) -> str:
    """Plain-text run summary framed by '=' rules."""
    lines: List[str] = ["=" * 80, title.upper(), "=" * 80, ""]
    for heading, body in sections.items():
        lines.append(f"## {heading}")
        lines.append("")
        if isinstance(body, pd.DataFrame):
            lines.append(body.to_string(index=False))
        elif isinstance(body, dict):
            lines.extend(f"  {k}: {v}" for k, v in body.items())
        else:
            lines.append(str(body))
        lines.append("")
    return "\n".join(lines)
