"""
File utilities for TransNN Lab
Output directories, JSON helpers, input hashing and gnuplot script emission
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def ensure_directory_exists(directory_path: PathLike) -> bool:
    """
    Ensure directory exists, create if it doesn't

    Args:
        directory_path: Path to directory

    Returns:
        True if directory exists or was created
    """
    try:
        Path(directory_path).mkdir(parents=True, exist_ok=True)
        return True
    except Exception as e:
        logger.error(f"Error creating directory {directory_path}: {e}", exc_info=True)
        return False


def _json_safe(value: Any) -> Any:
    # non-finite floats become strings so the files stay strict JSON
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def save_json(file_path: PathLike, data: Dict[str, Any]) -> Path:
    """
    Save data as JSON file

    Args:
        file_path: Path to output file
        data: Data to save

    Returns:
        The written path
    """
    path = Path(file_path)
    ensure_directory_exists(path.parent)
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(_json_safe(data), file, indent=2, ensure_ascii=False)
    logger.debug(f"Wrote {path}")
    return path


def load_json(file_path: PathLike) -> Optional[Dict[str, Any]]:
    """
    Load JSON file

    Returns:
        Loaded data or None if error
    """
    try:
        with open(file_path, 'r', encoding='utf-8') as file:
            return json.load(file)
    except Exception as e:
        logger.error(f"Error loading JSON from {file_path}: {e}", exc_info=True)
        return None


def file_sha256(file_path: PathLike) -> str:
    """
    Hex SHA-256 of a file, read in 64 KiB blocks

    Args:
        file_path: Path to file

    Returns:
        Hex digest
    """
    digest = hashlib.sha256()
    with open(file_path, 'rb') as file:
        for block in iter(lambda: file.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def write_gnuplot_script(script_path: PathLike, data_file: PathLike, x_column: int,
                         y_columns: Dict[str, int], title: str, xlabel: str, ylabel: str,
                         logscale: str = "") -> Path:
    """
    Emit a gnuplot script plotting columns of a CSV data file.

    Args:
        script_path: Output .gp path
        data_file: CSV file to plot (referenced by name, relative to the script)
        x_column: 1-based column of the abscissa
        y_columns: legend title -> 1-based column
        title: Plot title
        xlabel: X axis label
        ylabel: Y axis label
        logscale: "", "x", "y" or "xy"

    Returns:
        The written script path
    """
    path = Path(script_path)
    ensure_directory_exists(path.parent)
    data_name = Path(data_file).name
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set grid",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    plots = [f"'{data_name}' using {x_column}:{col} with linespoints title '{name}'"
             for name, col in y_columns.items()]
    lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    return path
