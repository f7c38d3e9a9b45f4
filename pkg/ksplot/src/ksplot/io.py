"""Readers for the simulator's on-disk interfaces.

Two formats are consumed, both defined by the producing side:

* diagnostics / sweep results: plain CSV with a header row;
* field snapshots: magic "KSF1", then u32 dim, u32 n1, n2, n3 (little endian,
  unused axes = 1), then n1*n2*n3 float64 values, little endian, C order.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

MAGIC = b"KSF1"
_HEADER = struct.Struct("<4sIIII")


class FormatError(ValueError):
    """Malformed input file."""


def read_table(path):
    """Read a CSV file into (header, columns) with text-valued columns."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FormatError(f"{path}: empty file, no header row")
        rows = [row for row in reader if row]
    if not rows:
        raise FormatError(f"{path}: no data rows")
    for row in rows:
        if len(row) != len(header):
            raise FormatError(f"{path}: ragged row with {len(row)} fields")
    columns = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    return header, columns


def numeric_column(columns, name, path="<csv>"):
    if name not in columns:
        known = ", ".join(sorted(columns))
        raise FormatError(f"{path}: no column {name!r} (have: {known})")
    try:
        return np.array([float(v) for v in columns[name]])
    except ValueError as exc:
        raise FormatError(f"{path}: column {name!r} is not numeric: {exc}") from exc


def read_snapshot(path):
    """Read a binary field snapshot; returns (dim, counts, values)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, dim, n1, n2, n3 = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if not (1 <= dim <= 3):
            raise FormatError(f"{path}: unsupported dimension {dim}")
        counts = (n1, n2, n3)
        if any(n < 1 for n in counts[:dim]) or any(n != 1 for n in counts[dim:]):
            raise FormatError(f"{path}: inconsistent counts {counts} for dim {dim}")
        n = n1 * n2 * n3
        payload = fh.read()
    if len(payload) != 8 * n:
        raise FormatError(f"{path}: expected {8 * n} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").reshape(counts[:dim])
    return dim, counts[:dim], values
