"""Standalone writer for the PSEL binary feature-file format, version 1.

The format is the interchange contract with the patchsieve toolkit; it
is reimplemented here so the exporter carries no dependency on that
package. Layout, all little-endian: a header packing the magic bytes,
format version, descriptor-kind code, row count, and dimension; then one
length-prefixed UTF-8 id per row; then the float32 row matrix in row-major
order.
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"PSEL"
VERSION = 1
DEEP4096_KIND = 2
DEEP_DIM = 4096

_HEADER = struct.Struct("<4sIIQI")


def serialize(ids: list[str], matrix: np.ndarray, kind_code: int = DEEP4096_KIND) -> bytes:
    """Pack ids and a (count, dim) float32 matrix into one payload."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {matrix.shape}")
    if len(ids) != matrix.shape[0]:
        raise ValueError(f"{len(ids)} ids for {matrix.shape[0]} rows")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix contains non-finite values")
    count, dim = matrix.shape
    parts = [_HEADER.pack(MAGIC, VERSION, kind_code, count, dim)]
    for pid in ids:
        raw = pid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    parts.append(matrix.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def write(path: str | Path, ids: list[str], matrix: np.ndarray,
          kind_code: int = DEEP4096_KIND) -> None:
    """Serialize and write atomically (visible either complete or not at all)."""
    path = Path(path)
    payload = serialize(ids, matrix, kind_code)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
