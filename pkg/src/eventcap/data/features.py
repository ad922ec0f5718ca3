"""Binary matrix files.

Feature files: little-endian header, magic ``DVCF``, u32 rows, u32 cols,
then rows*cols float32 values, row-major. Checkpoint tensors use the same
layout with magic ``DVCT`` and float64 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from eventcap import ValidationError

MAGIC_F32 = b"DVCF"
MAGIC_F64 = b"DVCT"

_HEADER = struct.Struct("<4sII")


def write_matrix(path, matrix, dtype="float32"):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValidationError(f"{path}: expected a 2-D matrix, got shape {matrix.shape}")
    if dtype == "float32":
        magic, payload = MAGIC_F32, matrix.astype("<f4")
    elif dtype == "float64":
        magic, payload = MAGIC_F64, matrix.astype("<f8")
    else:
        raise ValidationError(f"unsupported matrix dtype: {dtype}")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, rows, cols))
        fh.write(payload.tobytes(order="C"))


def read_matrix(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read feature file {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic == MAGIC_F32:
        dt, width = np.dtype("<f4"), 4
    elif magic == MAGIC_F64:
        dt, width = np.dtype("<f8"), 8
    else:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + rows * cols * width
    if len(blob) != expected:
        raise ValidationError(f"{path}: size {len(blob)} does not match header ({expected})")
    data = np.frombuffer(blob, dtype=dt, offset=_HEADER.size)
    # frombuffer views are read-only; loaded tensors get trained in place
    return data.reshape(rows, cols).copy()
