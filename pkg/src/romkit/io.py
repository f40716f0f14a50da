"""Binary matrix files with JSON sidecars, and deterministic CSV output.

Matrix layout: 16-byte header (magic ``b"ROMF"``, then little-endian u32
rows, u32 cols, u32 dtype code with 1 = float64) followed by the entries in
column-major order. Metadata lives next to it in ``<path>.json``.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["write_matrix", "read_matrix", "read_meta", "write_csv", "fmt"]

MAGIC = b"ROMF"
DTYPE_F64 = 1
_HEADER = struct.Struct("<4sIII")


class MatrixFormatError(ValueError):
    pass


def _sidecar(path):
    return Path(str(path) + ".json")


def write_matrix(path, M, meta=None):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValueError(f"need a 2-D array, got shape {M.shape}")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, M.shape[0], M.shape[1], DTYPE_F64))
        fh.write(M.astype("<f8").tobytes(order="F"))
    _sidecar(path).write_text(json.dumps(meta or {}, indent=1, sort_keys=True) + "\n")


def read_matrix(path):
    """Return ``(matrix, metadata)``; metadata is ``{}`` without a sidecar."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header")
    magic, rows, cols, dtype = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}")
    if dtype != DTYPE_F64:
        raise MatrixFormatError(f"{path}: unsupported dtype code {dtype}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * rows * cols:
        raise MatrixFormatError(f"{path}: expected {8 * rows * cols} data bytes, found {len(body)}")
    M = np.frombuffer(body, dtype="<f8").reshape((rows, cols), order="F").astype(np.float64)
    return M, read_meta(path)


def read_meta(path):
    side = _sidecar(path)
    return json.loads(side.read_text()) if side.exists() else {}


def fmt(x):
    """Stable text for a CSV cell; floats get 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
