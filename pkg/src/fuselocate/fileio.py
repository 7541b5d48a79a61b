"""Small deterministic file helpers used across the package.

All text artifacts are written with fixed float formatting (%.9g), sorted
JSON keys and ``\n`` line endings so that a rerun with the same seed
produces byte-identical files.
"""

import hashlib
import json
import os

import numpy as np

FLOAT_FMT = "%.9g"


def fmt_float(value) -> str:
    return FLOAT_FMT % float(value)


def write_csv(path, header, columns) -> None:
    """Write columns (sequences of equal length) under a header row."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    for c in cols:
        if len(c) != n:
            raise ValueError("csv columns must have equal length")
    lines = [",".join(header)]
    for i in range(n):
        parts = []
        for c in cols:
            v = c[i]
            if isinstance(v, str):
                parts.append(v)
            elif isinstance(v, (int, np.integer)):
                parts.append(str(int(v)))
            else:
                parts.append(fmt_float(v))
        lines.append(",".join(parts))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path, expected_header=None):
    """Read a CSV written by :func:`write_csv`.

    Returns (header, list-of-string-columns).  Raises ValueError on a
    header mismatch or ragged rows.
    """
    with open(path, "r", newline="") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh if ln.strip() != ""]
    if not lines:
        raise ValueError(f"{path}: empty csv")
    header = lines[0].split(",")
    if expected_header is not None and header != list(expected_header):
        raise ValueError(
            f"{path}: header {header!r} does not match expected {list(expected_header)!r}"
        )
    cols = [[] for _ in header]
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ValueError(f"{path}: ragged row {ln!r}")
        for c, v in zip(cols, parts):
            c.append(v)
    return header, cols


def float_column(col) -> np.ndarray:
    return np.array([float(v) for v in col], np.float64)


def write_json(path, obj) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, "r") as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
