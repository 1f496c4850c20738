"""Self-describing CSV and JSON reports.

Every CSV starts with one comment line
``# hwmap <kind> schema=1 config_hash=<sha256>`` followed by the column row.
Floats are written with 17 significant digits so files are reproducible
byte for byte.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

SCHEMA = 1


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def header_line(kind, config_hash):
    return f"# hwmap {kind} schema={SCHEMA} config_hash={config_hash}"


def write_csv(path, kind, config_hash, columns, rows):
    lines = [header_line(kind, config_hash), ",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row width {len(row)} differs from {len(columns)} columns")
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, kind, config_hash, payload):
    doc = {"kind": kind, "schema": SCHEMA, "config_hash": config_hash, "data": _clean(payload)}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return Path(path)


def read_csv(path):
    """(header comment, columns, rows as lists of strings)."""
    lines = Path(path).read_text().splitlines()
    return lines[0], lines[1].split(","), [ln.split(",") for ln in lines[2:]]
