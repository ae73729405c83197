"""Canonical text serialization.

All floats in persisted artifacts are printed with 17 significant digits,
which round-trips float64 exactly and makes repeated runs byte-identical.
JSON objects are emitted with sorted keys so a document has exactly one
canonical form; spec hashes are taken over that form.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .errors import MissingFileError, ParameterError


def fmt_float(x) -> str:
    """Format one float with 17 significant digits (float64 round-trip exact)."""
    x = float(x)
    if not math.isfinite(x):
        raise ParameterError(f"non-finite value {x!r} cannot be serialized")
    return format(x, ".17g")


def dumps_canonical(obj, indent: int = 0) -> str:
    """Serialize to canonical JSON: sorted keys, floats via fmt_float."""
    pad = " " * indent
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        items = [dumps_canonical(v, indent) for v in obj]
        return "[" + ", ".join(items) + "]"
    if isinstance(obj, dict):
        items = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise ParameterError(f"JSON keys must be strings, got {key!r}")
            items.append(json.dumps(key) + ": " + dumps_canonical(obj[key], indent))
        if indent:
            inner = (",\n" + pad).join(items)
            return "{\n" + pad + inner + "\n}"
        return "{" + ", ".join(items) + "}"
    raise ParameterError(f"cannot serialize {type(obj).__name__} to JSON")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_canonical(obj, indent=2))
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise MissingFileError(f"missing file: {path}") from None


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_vector_csv(path, vec) -> None:
    """One vector per file, header `index,value`."""
    vec = np.asarray(vec, dtype=float)
    lines = ["index,value"]
    lines += [f"{k},{fmt_float(v)}" for k, v in enumerate(vec)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vector_csv(path) -> np.ndarray:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise MissingFileError(f"missing file: {path}") from None
    if not lines or lines[0] != "index,value":
        raise ParameterError(f"{path}: expected header 'index,value'")
    values = []
    for line in lines[1:]:
        if not line:
            continue
        _, value = line.split(",")
        values.append(float(value))
    return np.array(values, dtype=float)


def write_table_csv(path, header, rows) -> None:
    """Write a CSV table; cells are pre-formatted strings."""
    lines = [",".join(header)]
    lines += [",".join(row) for row in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table_csv(path):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise MissingFileError(f"missing file: {path}") from None
    if not lines:
        raise ParameterError(f"{path}: empty CSV")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if line]
    return header, rows
