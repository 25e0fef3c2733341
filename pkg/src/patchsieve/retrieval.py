"""Exact Euclidean nearest-neighbor retrieval over descriptor sets.

The index is a brute-force scan: entries live in one float matrix sorted
by patch id, distances are computed in float64, and ties resolve to the
lexicographically smaller patch id. Persistence wraps the descriptor
payload with a JSON metadata trailer and a fixed-width length footer so
truncation is detectable.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputFormatError, TruncatedPayloadError
from .features import (
    Descriptor,
    DescriptorKind,
    _check_homogeneous,
    deserialize_features,
    parse_patch_id,
    serialize_features,
)
from .gmm import SelectionSet
from .ioutil import atomic_write_bytes

_FOOTER = struct.Struct("<Q")
INDEX_FORMAT = "psel-index"
INDEX_VERSION = 1


@dataclass
class Match:
    patch_id: str
    scan_id: str
    distance: float
    rank: int  # 1-based


@dataclass
class RetrievalIndex:
    kind: DescriptorKind
    dim: int
    ids: list[str]  # sorted lexicographically
    scan_ids: list[str]
    vectors: np.ndarray  # (n, dim) float32, row i belongs to ids[i]
    metadata: dict = field(default_factory=dict)
    _matrix64: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.vectors.shape != (len(self.ids), self.dim):
            raise ValueError("vector block shape disagrees with ids/dim")
        self._matrix64 = self.vectors.astype(np.float64)

    def __len__(self) -> int:
        return len(self.ids)


def build_index(
    descriptors: list[Descriptor],
    selection: SelectionSet | None = None,
    metadata: dict | None = None,
) -> RetrievalIndex:
    """Index the given descriptors, or just the selection's subset."""
    _check_homogeneous(descriptors)
    if selection is not None:
        have = {d.patch_id for d in descriptors}
        missing = sorted(set(selection.retained) - have)
        if missing:
            raise InputFormatError(
                f"selection references {len(missing)} ids missing from "
                f"descriptors, first: {missing[0]!r}"
            )
        wanted = set(selection.retained)
        descriptors = [d for d in descriptors if d.patch_id in wanted]

    ordered = sorted(descriptors, key=lambda d: d.patch_id)
    meta = dict(metadata or {})
    if selection is not None:
        meta["selection"] = {
            "fraction": selection.fraction,
            "method": selection.method,
            "seed": selection.seed,
        }
    return RetrievalIndex(
        kind=ordered[0].kind,
        dim=ordered[0].dim,
        ids=[d.patch_id for d in ordered],
        scan_ids=[parse_patch_id(d.patch_id)[0] for d in ordered],
        vectors=np.stack([d.values for d in ordered]),
        metadata=meta,
    )


def _squared_distances(matrix64: np.ndarray, q: np.ndarray) -> np.ndarray:
    # direct (M - q)^2 form: exact, no cancellation from expanded products
    diff = matrix64 - q
    return np.einsum("ij,ij->i", diff, diff)


def query(index: RetrievalIndex, q: Descriptor | np.ndarray, k: int) -> list[Match]:
    """Exact top-k by Euclidean distance; ties go to the smaller patch id."""
    if len(index) == 0:
        raise InputFormatError("cannot query an empty index")
    vec = q.values if isinstance(q, Descriptor) else np.asarray(q)
    if vec.ndim != 1 or vec.shape[0] != index.dim:
        raise InputFormatError(
            f"query dim {vec.shape} does not match index dim {index.dim}"
        )
    if not (1 <= k <= len(index)):
        raise ValueError(f"k must be in [1, {len(index)}], got {k}")

    d2 = _squared_distances(index._matrix64, vec.astype(np.float64))
    # ids are presorted, so a stable sort realizes the id tie rule
    order = np.argsort(d2, kind="stable")[:k]
    return [
        Match(
            patch_id=index.ids[i],
            scan_id=index.scan_ids[i],
            distance=float(np.sqrt(d2[i])),
            rank=r,
        )
        for r, i in enumerate(order.tolist(), start=1)
    ]


def query_batch(
    index: RetrievalIndex,
    queries: list[tuple[str, np.ndarray]],
    k: int,
) -> list[tuple[str, list[Match]]]:
    """Top-k for many queries. Each query is scanned independently so the
    results are identical to one-at-a-time query() calls."""
    return [(qid, query(index, vec, k)) for qid, vec in queries]


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    descriptors = [
        Descriptor(patch_id=pid, kind=index.kind, values=index.vectors[i])
        for i, pid in enumerate(index.ids)
    ]
    payload = serialize_features(descriptors)
    meta = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "kind": index.kind.value,
        "dim": index.dim,
        "count": len(index),
        "metadata": index.metadata,
    }
    trailer = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    atomic_write_bytes(path, payload + trailer + _FOOTER.pack(len(trailer)))


def load_index(path: str | Path) -> RetrievalIndex:
    blob = Path(path).read_bytes()
    if len(blob) < _FOOTER.size:
        raise TruncatedPayloadError(f"index file too short ({len(blob)} bytes)")
    (trailer_len,) = _FOOTER.unpack(blob[-_FOOTER.size :])
    if trailer_len + _FOOTER.size > len(blob):
        raise TruncatedPayloadError(
            f"metadata trailer length {trailer_len} exceeds file size"
        )
    trailer = blob[-(_FOOTER.size + trailer_len) : -_FOOTER.size]
    try:
        meta = json.loads(trailer.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"corrupt index metadata trailer: {exc}") from exc
    if meta.get("format") != INDEX_FORMAT:
        raise InputFormatError(f"not an index file: format {meta.get('format')!r}")
    if meta.get("version") != INDEX_VERSION:
        raise InputFormatError(f"unsupported index version {meta.get('version')!r}")

    payload = blob[: len(blob) - _FOOTER.size - trailer_len]
    descriptors, consumed = deserialize_features(payload)
    if consumed != len(payload):
        raise InputFormatError(
            f"index payload has {len(payload) - consumed} unexpected trailing bytes"
        )
    if len(descriptors) != meta["count"]:
        raise InputFormatError(
            f"index declares {meta['count']} entries, payload holds {len(descriptors)}"
        )
    return RetrievalIndex(
        kind=descriptors[0].kind,
        dim=descriptors[0].dim,
        ids=[d.patch_id for d in descriptors],
        scan_ids=[parse_patch_id(d.patch_id)[0] for d in descriptors],
        vectors=np.stack([d.values for d in descriptors]),
        metadata=meta["metadata"],
    )


def results_to_csv(results: list[tuple[str, list[Match]]]) -> str:
    """Search results as CSV: query_id, rank, patch_id, scan_id, distance."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_id", "rank", "patch_id", "scan_id", "distance"])
    for qid, matches in results:
        for m in matches:
            writer.writerow([qid, m.rank, m.patch_id, m.scan_id, repr(m.distance)])
    return buf.getvalue()


def load_results_csv(path: str | Path) -> list[tuple[str, list[Match]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["query_id", "rank", "patch_id", "scan_id", "distance"]:
            raise InputFormatError(f"unexpected results CSV header: {header}")
        grouped: dict[str, list[Match]] = {}
        order: list[str] = []
        for row in reader:
            if len(row) != 5:
                raise InputFormatError(f"malformed results row: {row}")
            qid, rank, pid, sid, dist = row
            if qid not in grouped:
                grouped[qid] = []
                order.append(qid)
            grouped[qid].append(
                Match(patch_id=pid, scan_id=sid, distance=float(dist), rank=int(rank))
            )
    return [(qid, grouped[qid]) for qid in order]
