"""Bit-stable text rendering of records, tables and manifests."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Iterable

RECORD_COLUMNS = ("epsilon", "trial", "exit_time", "exit_kind", "final_c", "final_eta_h1")


def fmt(x: float) -> str:
    """17 significant digits; ``inf``/``-inf``/``nan`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def records_csv(records: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([fmt(r.epsilon), r.trial_index, fmt(r.exit_time), r.exit_kind, fmt(r.final_c), fmt(r.final_eta_h1)])
    return buf.getvalue()


def table_csv(columns: Iterable[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(columns))
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _encode(obj: Any, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalar
        obj = obj.item()
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        # JSON has no inf/nan; those are written as strings
        return fmt(obj) if math.isfinite(obj) else json.dumps(fmt(obj))
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        body = ",\n".join(f"{pad}{json.dumps(k)}: {_encode(v, indent + 1)}" for k, v in items)
        return "{\n" + body + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        body = ",\n".join(pad + _encode(v, indent + 1) for v in obj)
        return "[\n" + body + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    return _encode(obj, 0) + "\n"


def read_records(text: str) -> list:
    """Inverse of :func:`records_csv`."""
    from .experiments import ExitRecord

    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
        raise ValueError(f"records table must have columns {list(RECORD_COLUMNS)}, got {reader.fieldnames}")
    return [
        ExitRecord(int(row["trial"]), float(row["epsilon"]), float(row["exit_time"]), row["exit_kind"], float(row["final_c"]), float(row["final_eta_h1"]))
        for row in reader
    ]
