"""Descriptor interchange format and PCA dimensionality reduction.

The on-disk FeatureFile layout (version 1) is bit-exact and little-endian:

    magic   4 bytes  b"PSEL"
    version u32
    kind    u32      (see ``DescriptorKind.code``)
    count   u64
    dim     u32
    ids     count x (u32 byte length + UTF-8 bytes)
    matrix  count*dim float32, row-major

A standalone feature file must end exactly after the matrix; embedding
formats (the retrieval index) append their own trailer.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateIdError,
    InputFormatError,
    MagicMismatchError,
    NumericalError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .ioutil import atomic_write_bytes, atomic_write_text

MAGIC = b"PSEL"
VERSION = 1

_HEADER = struct.Struct("<4sIIQI")
# DOTALL: scan ids are arbitrary strings, including ones with newlines
_PATCH_ID_RE = re.compile(r"\A(?P<scan>.+)_x(?P<gx>-?\d+)_y(?P<gy>-?\d+)\Z", re.DOTALL)


class DescriptorKind(Enum):
    lbp36 = 1
    deep4096 = 2
    pca_reduced = 3

    @property
    def code(self) -> int:
        return self.value

    @classmethod
    def from_code(cls, code: int) -> "DescriptorKind":
        for k in cls:
            if k.value == code:
                return k
        raise VersionMismatchError(f"unknown descriptor kind code {code}")


def make_patch_id(scan_id: str, grid_x: int, grid_y: int) -> str:
    return f"{scan_id}_x{grid_x}_y{grid_y}"


def parse_patch_id(patch_id: str) -> tuple[str, int, int]:
    """Split a patch id of the form ``<scan>_x<gx>_y<gy>``.

    Ids not following the pattern map to (patch_id, 0, 0); the id string
    itself stays the identity everywhere, so this is only a convenience
    for grouping by scan.
    """
    m = _PATCH_ID_RE.match(patch_id)
    if m is None:
        return patch_id, 0, 0
    return m.group("scan"), int(m.group("gx")), int(m.group("gy"))


@dataclass
class Descriptor:
    """A fixed-length feature vector tagged with its kind and patch identity."""

    patch_id: str
    kind: DescriptorKind
    values: np.ndarray  # float32 vector

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 1:
            raise ValueError("descriptor values must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"descriptor {self.patch_id!r} has non-finite values")
        if self.kind is DescriptorKind.lbp36 and self.dim != 36:
            raise ValueError(f"lbp36 descriptor must have dim 36, got {self.dim}")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def scan_id(self) -> str:
        return parse_patch_id(self.patch_id)[0]

    @property
    def grid_xy(self) -> tuple[int, int]:
        _, gx, gy = parse_patch_id(self.patch_id)
        return gx, gy


def _check_homogeneous(descriptors: list[Descriptor]) -> tuple[DescriptorKind, int]:
    if not descriptors:
        raise ValueError("refusing to write an empty descriptor list")
    kind = descriptors[0].kind
    dim = descriptors[0].dim
    for d in descriptors:
        if d.kind is not kind:
            raise ValueError(f"mixed descriptor kinds: {kind.name} vs {d.kind.name}")
        if d.dim != dim:
            raise ValueError(f"mixed descriptor dims: {dim} vs {d.dim}")
    seen = set()
    for d in descriptors:
        if d.patch_id in seen:
            raise DuplicateIdError(f"duplicate descriptor id {d.patch_id!r}")
        seen.add(d.patch_id)
    return kind, dim


def serialize_features(descriptors: list[Descriptor]) -> bytes:
    kind, dim = _check_homogeneous(descriptors)
    parts = [_HEADER.pack(MAGIC, VERSION, kind.code, len(descriptors), dim)]
    for d in descriptors:
        raw = d.patch_id.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    matrix = np.stack([d.values for d in descriptors]).astype("<f4")
    parts.append(matrix.tobytes(order="C"))
    return b"".join(parts)


def write_features(descriptors: list[Descriptor], path: str | Path) -> None:
    atomic_write_bytes(path, serialize_features(descriptors))


def deserialize_features(data: bytes) -> tuple[list[Descriptor], int]:
    """Parse one FeatureFile payload; returns (descriptors, bytes consumed)."""
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(
            f"file too short for header: {len(data)} < {_HEADER.size} bytes"
        )
    magic, version, kind_code, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MagicMismatchError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    kind = DescriptorKind.from_code(kind_code)

    pos = _HEADER.size
    ids: list[str] = []
    for i in range(count):
        if pos + 4 > len(data):
            raise TruncatedPayloadError(f"truncated while reading id {i} length")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise TruncatedPayloadError(f"truncated while reading id {i} bytes")
        ids.append(data[pos : pos + n].decode("utf-8"))
        pos += n
    if len(set(ids)) != len(ids):
        raise DuplicateIdError("feature file contains duplicate ids")

    nbytes = count * dim * 4
    if pos + nbytes > len(data):
        raise TruncatedPayloadError(
            f"truncated matrix: need {nbytes} bytes, have {len(data) - pos}"
        )
    matrix = np.frombuffer(data, dtype="<f4", count=count * dim, offset=pos)
    matrix = matrix.reshape(count, dim).copy()
    pos += nbytes
    descriptors = [Descriptor(pid, kind, matrix[i]) for i, pid in enumerate(ids)]
    return descriptors, pos


def read_features(path: str | Path) -> list[Descriptor]:
    data = Path(path).read_bytes()
    descriptors, consumed = deserialize_features(data)
    if consumed != len(data):
        raise TruncatedPayloadError(
            f"{len(data) - consumed} unexpected trailing bytes after payload"
        )
    return descriptors


def descriptor_matrix(descriptors: list[Descriptor]) -> np.ndarray:
    """Stack descriptor values into an n x d float64 matrix."""
    return np.stack([d.values for d in descriptors]).astype(np.float64)


# --- PCA -----------------------------------------------------------------


@dataclass
class PcaModel:
    """Principal components retaining a target fraction of total variance."""

    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray  # (k,), non-increasing
    total_variance: float
    retained_fraction: float

    @property
    def k(self) -> int:
        return int(self.components.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.components.shape[1])


def pca_fit(features: np.ndarray, retained_fraction: float) -> PcaModel:
    """Fit principal components keeping the smallest prefix whose cumulative
    explained variance reaches ``retained_fraction`` of the total.

    Covariance uses the n-1 divisor. The eigenproblem is solved on the
    d x d covariance when d is moderate and n > d, otherwise on the n x n
    Gram matrix (identical spectra). Component signs are fixed so the
    largest-magnitude coordinate of each component is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be an n x d matrix")
    n, d = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 rows to fit PCA, got {n}")
    if not (0.0 < retained_fraction <= 1.0):
        raise ValueError(f"retained_fraction must be in (0, 1], got {retained_fraction}")
    if not np.all(np.isfinite(X)):
        raise NumericalError("features contain non-finite values")

    mean = X.mean(axis=0)
    centered = X - mean
    total_variance = float(np.sum(centered * centered) / (n - 1))
    if total_variance == 0.0:
        raise NumericalError("zero total variance: all rows identical")

    max_rank = min(n - 1, d)
    if d <= 4096 and n > d:
        cov = (centered.T @ centered) / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:max_rank]
        eigvals = np.maximum(eigvals[order], 0.0)
        components = eigvecs[:, order].T
    else:
        gram = (centered @ centered.T) / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1][:max_rank]
        eigvals = np.maximum(eigvals[order], 0.0)
        keep = eigvals > 0.0
        eigvals = eigvals[keep]
        u = eigvecs[:, order][:, keep]
        components = (centered.T @ u) / np.sqrt(eigvals * (n - 1))
        components = components.T

    # smallest prefix reaching the variance target; tiny relative slack for
    # rounding noise in the eigensolve
    cumulative = np.cumsum(eigvals)
    target = retained_fraction * total_variance - 1e-12 * total_variance
    k = int(np.searchsorted(cumulative, target) + 1)
    k = min(k, len(eigvals))

    components = components[:k].copy()
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0

    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=eigvals[:k].copy(),
        total_variance=total_variance,
        retained_fraction=float(retained_fraction),
    )


def pca_transform(model: PcaModel, features: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise ValueError(
            f"dimension mismatch: features have d={X.shape[1]}, model expects {model.input_dim}"
        )
    return (X - model.mean) @ model.components.T


def save_pca_model(model: PcaModel, path: str | Path) -> None:
    doc = {
        "format": "psel-pca",
        "version": 1,
        "retained_fraction": model.retained_fraction,
        "total_variance": model.total_variance,
        "mean": model.mean.tolist(),
        "explained_variance": model.explained_variance.tolist(),
        "components": model.components.tolist(),
    }
    # json round-trips Python floats exactly via repr
    atomic_write_text(path, json.dumps(doc, sort_keys=True) + "\n")


def load_pca_model(path: str | Path) -> PcaModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "psel-pca":
        raise MagicMismatchError(f"{path}: not a PCA model file")
    if doc.get("version") != 1:
        raise VersionMismatchError(f"{path}: unsupported PCA model version")
    model = PcaModel(
        mean=np.asarray(doc["mean"], dtype=np.float64),
        components=np.asarray(doc["components"], dtype=np.float64),
        explained_variance=np.asarray(doc["explained_variance"], dtype=np.float64),
        total_variance=float(doc["total_variance"]),
        retained_fraction=float(doc["retained_fraction"]),
    )
    if model.components.ndim != 2 or len(model.explained_variance) != model.k:
        raise InputFormatError(f"{path}: inconsistent PCA model shapes")
    return model


def reconstruction(model: PcaModel, projected: np.ndarray) -> np.ndarray:
    """Map projected coordinates back to the input space (mean added back)."""
    P = np.atleast_2d(np.asarray(projected, dtype=np.float64))
    if P.shape[1] != model.k:
        raise ValueError(f"projected coords have k={P.shape[1]}, model has {model.k}")
    return P @ model.components + model.mean
