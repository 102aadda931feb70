"""CSV ingestion and deterministic JSON output."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InputError

__all__ = ["read_csv", "dumps", "write_atomic"]


def _parse_cell(text: str) -> float | None:
    try:
        return float(text)
    except ValueError:
        return None


def read_csv(path: str | os.PathLike) -> np.ndarray:
    """Read a numeric CSV (UTF-8, optional single header row) into an n x m array.

    A first row that does not parse as numbers is treated as the header. Any
    other non-numeric or non-finite cell raises :class:`InputError` naming its
    row and column (1-based, counting the header line).
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            lines = [row for row in csv.reader(fh)]
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read data file {str(path)!r}: {exc}") from exc

    numbered = [(i + 1, row) for i, row in enumerate(lines) if any(cell.strip() for cell in row)]
    if numbered and any(_parse_cell(cell.strip()) is None for cell in numbered[0][1]):
        numbered = numbered[1:]
    if not numbered:
        raise InputError(f"data file {str(path)!r} contains no observations")

    width = len(numbered[0][1])
    out = np.empty((len(numbered), width))
    for r, (lineno, row) in enumerate(numbered):
        if len(row) != width:
            raise InputError(f"row {lineno} has {len(row)} columns, expected {width}")
        for c, cell in enumerate(row):
            value = _parse_cell(cell.strip())
            if value is None or not math.isfinite(value):
                raise InputError(f"invalid number {cell!r} at row {lineno}, column {c + 1}")
            out[r, c] = value
    return out


def _format_number(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    close = "\n" + " " * (indent * level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_number(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{_encode(str(key), indent, level + 1)}: {_encode(value, indent, level + 1)}" for key, value in obj.items()]
        return "{" + pad + ("," + pad).join(items) + close + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[" + pad + ("," + pad).join(_encode(v, indent, level + 1) for v in obj) + close + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits.

    Matrices are nested lists in row-major order. Non-finite floats become
    ``null``. Key order follows the input mapping.
    """
    return _encode(obj, indent, 0) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
