"""CSV and JSON writers that stamp every artifact with the config hash."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path: Path, payload: dict, chash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"config_sha256": chash, **_clean(payload)}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, columns: Sequence[str], rows: np.ndarray, chash: str) -> None:
    """Write ``rows`` with 17 significant digits under a ``# config_sha256`` line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# config_sha256: {chash}\n")
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, rows, delimiter=",", fmt="%.17g")


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    cols = body[0].split(",")
    data = np.loadtxt(body[1:], delimiter=",", ndmin=2) if len(body) > 1 else np.empty((0, len(cols)))
    return cols, data
