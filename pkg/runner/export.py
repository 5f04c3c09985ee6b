# runner/export.py
import logging
import os
import subprocess
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from kinetic.mesh import VelocityGrid
from utils.config import Config

logger = logging.getLogger('kinetic_uq')

UNKNOWN_VERSION = "unknown"


def number_format() -> str:
    return f"%.{Config.FLOAT_DIGITS}g"


def format_value(value: Any) -> str:
    """Manifest rendering: floats with the configured significant digits, None as empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return number_format() % float(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(item) for item in value)
    return str(value)


def grid_metadata(grid: VelocityGrid, **extra: Any) -> str:
    fields = {"w_min": grid.w_min, "w_max": grid.w_max, "n_cells": grid.n_cells, "dw": grid.dw}
    fields.update(extra)
    return "grid " + " ".join(f"{key}={format_value(value)}" for key, value in fields.items())


def write_table(path: str, first_column: str, first_values: Sequence[float], columns: Dict[str, Sequence[float]],
                metadata: Optional[List[str]] = None) -> str:
    """
    Write a CSV whose first column is a time or sweep value and the others
    one statistic each. Missing entries are written as nan.

    Args:
        path (str): Output file
        first_column (str): Name of the first column
        first_values (sequence): Its values
        columns (dict): Column name -> values, same length as first_values
        metadata (list, optional): Header lines written above the column names

    Returns:
        str: The path written
    """
    first_values = np.asarray(first_values, dtype=float)
    data = [first_values]
    for name, values in columns.items():
        values = np.asarray(values, dtype=float)
        if values.shape != first_values.shape:
            raise ValueError(f"column '{name}' has {values.size} entries, expected {first_values.size}")
        data.append(values)
    header = list(metadata or []) + [",".join([first_column] + list(columns))]
    _save(path, np.column_stack(data), header)
    return path


def write_series(path: str, times: np.ndarray, values: np.ndarray, grid: VelocityGrid,
                 metadata: Optional[List[str]] = None) -> str:
    """
    One row per snapshot time: the time, then one column per cell centre.

    Args:
        path (str): Output file
        times (array): Snapshot times
        values (array): Shape (n_t, n_cells)
        grid (VelocityGrid): Mesh of the columns, recorded in the header
        metadata (list, optional): Extra header lines

    Returns:
        str: The path written
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (len(times), grid.n_cells):
        raise ValueError(f"series shape {values.shape} does not match {len(times)} times x {grid.n_cells} cells")
    names = ["time"] + [f"w_{i}" for i in range(grid.n_cells)]
    header = [grid_metadata(grid)] + list(metadata or []) + [",".join(names)]
    _save(path, np.column_stack([np.asarray(times, dtype=float), values]), header)
    return path


def _save(path: str, data: np.ndarray, header: List[str]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    np.savetxt(path, data, fmt=number_format(), delimiter=",", header="\n".join(header), comments="# ")
    logger.debug(f"Wrote {path}")


def write_manifest(path: str, entries: Dict[str, Any]) -> str:
    """key = value text, one entry per line in insertion order."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key} = {format_value(value)}\n")
    return path


def read_manifest(path: str) -> Dict[str, str]:
    entries = {}
    with open(path, "r") as f:
        for line in f:
            if " = " in line:
                key, value = line.rstrip("\n").split(" = ", 1)
                entries[key] = value
    return entries


def version_string() -> str:
    """git describe of the source tree, or 'unknown' outside a checkout."""
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    try:
        result = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=root,
                                capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug(f"git describe unavailable: {e}")
        return UNKNOWN_VERSION
    if result.returncode != 0:
        return UNKNOWN_VERSION
    return result.stdout.strip() or UNKNOWN_VERSION
