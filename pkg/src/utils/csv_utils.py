"""
Artifact serialization helpers.

CSV tables are written with pandas at full double precision and a fixed
line terminator so identical runs produce byte-identical files. JSON
manifests are hashed over their canonical form.
"""

import dataclasses
import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np
import pandas as pd

from src.utils.logger import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"


def make_serializable(obj: Any) -> Any:
    """
    Convert numpy values, dataclasses, enums and paths into JSON-ready types.

    Args:
        obj: Arbitrary nested object

    Returns:
        Structure made of dicts, lists, strings, numbers, booleans and None
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return make_serializable(dataclasses.asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): make_serializable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [make_serializable(item) for item in obj]
    if isinstance(obj, np.ndarray):
        return make_serializable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(value: Any) -> str:
    """Compact, key-sorted JSON encoding used for hashing."""
    return json.dumps(make_serializable(value), sort_keys=True, separators=(",", ":"))


def content_hash(value: Any) -> str:
    """SHA-256 hex digest of the canonical JSON encoding of value."""
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


def write_json(value: Any, path: Union[str, Path]) -> Path:
    """
    Write value as indented, key-sorted JSON.

    Args:
        value: Object to serialize
        path: Output file

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        json.dump(make_serializable(value), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug(f"Wrote JSON: {path}")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON document."""
    with open(path) as f:
        return json.load(f)


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Write a DataFrame as CSV with full double precision.

    Args:
        frame: Table to write
        path: Output file

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote CSV: {path} ({len(frame)} rows)")
    return path


def read_frame(path: Union[str, Path]) -> pd.DataFrame:
    """Read a CSV written by write_frame, parsing floats exactly."""
    return pd.read_csv(path, float_precision="round_trip")


def fields_frame(nodes: np.ndarray, **fields: np.ndarray) -> pd.DataFrame:
    """
    Tabulate nodal fields: node index, coordinates, then one column per field.

    Args:
        nodes: Node coordinates, shape (n_nodes, dimension)
        **fields: Named nodal fields

    Returns:
        DataFrame with columns node, x, [y], then the field names
    """
    columns: Dict[str, np.ndarray] = {"node": np.arange(nodes.shape[0])}
    for axis, name in zip(range(nodes.shape[1]), ("x", "y")):
        columns[name] = nodes[:, axis]
    for name, values in fields.items():
        columns[name] = np.asarray(values, dtype=float)
    return pd.DataFrame(columns)
