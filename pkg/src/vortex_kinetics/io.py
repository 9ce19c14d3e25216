"""Byte-stable JSON and CSV output.

JSON is written with sorted keys, fixed separators and ``repr`` floats, so the
same inputs always produce the same bytes.  Complex numbers are stored as
``[re, im]`` pairs, numpy arrays as nested lists and mode tuples as strings
``"k1,k2"`` when used as dictionary keys.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def _key(k) -> str:
    """``(1, 0)`` -> ``"1,0"`` and ``((1, 0), (0, -1))`` -> ``"1,0;0,-1"``."""
    if isinstance(k, tuple):
        if any(isinstance(x, tuple) for x in k):
            return ";".join(_key(x) for x in k)
        return ",".join(str(int(x)) if isinstance(x, (int, np.integer)) else str(x) for x in k)
    return str(k)


def to_jsonable(obj: Any) -> Any:
    """Convert numpy, complex, dataclass and tuple-keyed objects to plain JSON types."""
    if isinstance(obj, dict):
        return {_key(k): to_jsonable(v) for k, v in obj.items()}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.repr}
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(float(obj.real)), to_jsonable(float(obj.imag))]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=1, separators=(",", ": "), allow_nan=False) + "\n"


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def emit(report: Any, fmt: str, path: str | Path, header: Sequence[str] | None = None) -> Path:
    """Write ``report`` as ``json`` or ``csv``; CSV needs ``header`` and an iterable of rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        text = dumps(report)
    elif fmt == "csv":
        if header is None:
            raise ValueError("CSV output needs a header")
        text = csv_text(header, report)
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'json'")
    path.write_text(text)
    return path


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def digest(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def file_digest(path: str | Path) -> str:
    return digest(Path(path).read_bytes())


def config_hash(cfg: Any) -> str:
    """Hash of the canonical JSON form of a configuration."""
    return digest(dumps(cfg))[:16]
