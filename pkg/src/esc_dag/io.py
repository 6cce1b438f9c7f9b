"""CSV and JSON file formats.

Reals are written with 17 significant digits so binary64 values round-trip
exactly. Sparse files (``j,l,value``) use 1-based indices; dense matrix
files have no header and one observation per row.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix(path, M: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        for row in np.atleast_2d(M):
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_matrix(path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric cell in {row}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return np.array(rows)


def write_triplets(path, M: np.ndarray, header=("j", "l", "value"), full_lower: bool = False) -> None:
    """Strictly lower-triangular entries as 1-based ``j,l,value`` rows.

    Only nonzeros are written unless ``full_lower`` is set.
    """
    p = M.shape[0]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for j in range(1, p):
            for l in range(j):
                if full_lower or M[j, l] != 0:
                    fh.write(f"{j + 1},{l + 1},{fmt(M[j, l])}\n")


def write_pairs(path, mask: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("j,l\n")
        for j, l in zip(*np.nonzero(np.tril(mask, k=-1))):
            fh.write(f"{j + 1},{l + 1}\n")


def read_triplets(path, p: int | None = None) -> tuple[np.ndarray, int]:
    """Read ``j,l,value`` rows into a dense ``p x p`` matrix.

    Without ``p`` the size is the largest ``j``. Returns ``(matrix, row_count)``.
    """
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 3:
            raise FormatError(f"{path}:1: expected a 3-column header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                j, l, v = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric cell in {row}") from None
            if not 1 <= l < j:
                raise FormatError(f"{path}:{lineno}: ({j}, {l}) is not strictly lower triangular")
            entries.append((j, l, v))
    size = p if p is not None else max((e[0] for e in entries), default=0)
    M = np.zeros((size, size))
    for j, l, v in entries:
        if j > size:
            raise FormatError(f"{path}: index {j} exceeds dimension {size}")
        M[j - 1, l - 1] = v
    return M, len(entries)


def write_vector(path, v: np.ndarray, header=("j", "d")) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, x in enumerate(v, start=1):
            fh.write(f"{i},{fmt(x)}\n")


def read_vector(path) -> np.ndarray:
    vals = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                i, x = int(row[0]), float(row[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric cell in {row}") from None
            if i != len(vals) + 1:
                raise FormatError(f"{path}:{lineno}: expected index {len(vals) + 1}, got {i}")
            vals.append(x)
    return np.array(vals)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dump_json(obj))


def write_rows(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(fmt(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns) + "\n")
