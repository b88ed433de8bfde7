"""Result serialisation: atomic writes, deterministic JSON, CSV and schema checks."""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from .errors import ValidationError

__all__ = ["atomic_write", "to_jsonable", "dumps_json", "csv_text", "load_schema",
           "validate", "write_output"]


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become None."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    ref = resources.files("disasterbp").joinpath("schemas", f"{name}.json")
    try:
        return json.loads(ref.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"no schema named {name!r}") from None


def validate(obj, schema_name: str) -> None:
    """Raise :class:`ValidationError` naming the offending field."""
    schema = load_schema(schema_name)
    v = jsonschema.Draft202012Validator(schema)
    e = jsonschema.exceptions.best_match(v.iter_errors(obj))
    if e is not None:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValidationError(f"{schema_name}: {where}: {e.message}")


def write_output(text: str, path=None) -> None:
    if path is None or str(path) == "-":
        import sys
        sys.stdout.write(text)
    else:
        atomic_write(path, text)
