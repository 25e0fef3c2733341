"""Per-scan self-organizing map clustering.

One SOM is trained per scan over its patch descriptors. Occupied
best-matching units define the raw clusters; clusters holding less than a
configured fraction of the scan's patches are dissolved into their
nearest neighbor by centroid distance. The inter/intra variance ratio is
the tuning signal for the map size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputFormatError
from .ioutil import atomic_write_json

VARIANCE_RATIO_INFINITE = math.inf


@dataclass
class SomConfig:
    map_side: int = 20
    epochs: int = 50
    initial_learning_rate: float = 0.5
    # None -> map_side / 2
    initial_neighborhood_radius: float | None = None
    seed: int = 0
    min_cluster_fraction: float = 0.01

    def __post_init__(self):
        if self.map_side < 2:
            raise ValueError(f"map_side must be >= 2, got {self.map_side}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 < self.min_cluster_fraction < 1.0):
            raise ValueError(
                f"min_cluster_fraction must be in (0, 1), got {self.min_cluster_fraction}"
            )

    @property
    def units(self) -> int:
        return self.map_side * self.map_side

    @property
    def start_radius(self) -> float:
        if self.initial_neighborhood_radius is not None:
            return float(self.initial_neighborhood_radius)
        return self.map_side / 2.0


@dataclass
class ClusterModel:
    """SOM weights plus merged per-patch cluster labels for one scan."""

    scan_id: str
    map_side: int
    patch_ids: list[str]
    labels: np.ndarray  # compacted cluster id per patch
    cluster_count: int
    variance_ratio: float
    seed: int
    weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def cluster_sizes(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.cluster_count).tolist()


_FINAL_LEARNING_RATE = 0.01
_FINAL_RADIUS = 1.0


def som_train(features: np.ndarray, cfg: SomConfig) -> np.ndarray:
    """Online SOM training; returns a (map_side^2, d) weight matrix.

    Weights start as input rows sampled with the seeded generator. Each
    step presents one input (seeded per-epoch shuffle), finds the BMU
    (minimum Euclidean distance, lowest unit index on ties) and pulls
    every unit toward the input with a Gaussian grid neighborhood.
    Learning rate and radius decay exponentially from their initial
    values to (0.01, 1.0) over epochs*n steps. Fixed seed gives
    bit-identical weights.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("features must be a non-empty n x d matrix")
    n, d = X.shape
    rng = np.random.default_rng(cfg.seed)
    weights = X[rng.integers(0, n, size=cfg.units)].copy()

    grid = np.arange(cfg.units)
    grid_r = grid // cfg.map_side
    grid_c = grid % cfg.map_side

    lr0 = cfg.initial_learning_rate
    r0 = cfg.start_radius
    total = cfg.epochs * n
    lr_decay = _FINAL_LEARNING_RATE / lr0
    rad_decay = _FINAL_RADIUS / r0

    t = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for i in order:
            frac = t / (total - 1) if total > 1 else 0.0
            lr = lr0 * lr_decay**frac
            sigma = r0 * rad_decay**frac
            x = X[i]
            bmu = int(np.argmin(((weights - x) ** 2).sum(axis=1)))
            d2 = (grid_r - grid_r[bmu]) ** 2 + (grid_c - grid_c[bmu]) ** 2
            h = np.exp(-d2 / (2.0 * sigma * sigma))
            weights += (lr * h)[:, None] * (x - weights)
            t += 1
    return weights


def som_assign(features: np.ndarray, weights: np.ndarray, block: int = 256) -> np.ndarray:
    """BMU flat index per feature row; ties go to the lowest unit index."""
    X = np.asarray(features, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ValueError(
            f"dimension mismatch: features d={X.shape[-1]}, weights d={W.shape[-1]}"
        )
    labels = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], block):
        chunk = X[start : start + block]
        d2 = ((chunk[:, None, :] - W[None, :, :]) ** 2).sum(axis=2)
        labels[start : start + block] = np.argmin(d2, axis=1)
    return labels


def variance_ratio(features: np.ndarray, labels: np.ndarray) -> float:
    """Weighted between-cluster over within-cluster sum of squares.

    Returns 0.0 when there is no between-cluster spread, and +inf (to be
    reported as a flagged sentinel in JSON) when the within term is zero
    while the between term is not.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    global_centroid = X.mean(axis=0)
    between = 0.0
    within = 0.0
    for lab in np.unique(labels):
        members = X[labels == lab]
        centroid = members.mean(axis=0)
        diff = centroid - global_centroid
        between += members.shape[0] * float(diff @ diff)
        within += float(((members - centroid) ** 2).sum())
    if within > 0.0:
        return between / within
    if between == 0.0:
        return 0.0
    return VARIANCE_RATIO_INFINITE


def merge_floor(min_cluster_fraction: float, n: int) -> int:
    """ceil(fraction*n) with a nudge for IEEE error (0.01*300 != 3.0)."""
    return int(math.ceil(min_cluster_fraction * n - 1e-9))


def merge_small_clusters(
    features: np.ndarray, raw_labels: np.ndarray, min_cluster_fraction: float
) -> tuple[np.ndarray, int]:
    """Dissolve undersized clusters into their nearest neighbor.

    Repeatedly takes the smallest cluster below ceil(fraction*n) patches
    (lowest raw id on ties) and relabels its members to the cluster whose
    centroid is closest (ties: larger cluster, then lower id), recomputing
    centroids after every merge, until all clusters meet the floor or one
    remains. Returns labels compacted to 0..K-1 ordered by descending
    size, plus K.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(raw_labels).copy()
    n = labels.shape[0]
    floor = merge_floor(min_cluster_fraction, n)

    members: dict[int, list[int]] = {}
    for i, lab in enumerate(labels.tolist()):
        members.setdefault(lab, []).append(i)

    while len(members) > 1:
        sizes = {lab: len(idx) for lab, idx in members.items()}
        small = [(sz, lab) for lab, sz in sizes.items() if sz < floor]
        if not small:
            break
        _, victim = min(small)
        centroids = {lab: X[idx].mean(axis=0) for lab, idx in members.items()}
        vc = centroids[victim]
        best = None
        for lab, c in centroids.items():
            if lab == victim:
                continue
            dist = float(((c - vc) ** 2).sum())
            key = (dist, -sizes[lab], lab)
            if best is None or key < best[0]:
                best = (key, lab)
        target = best[1]
        members[target].extend(members.pop(victim))

    order = sorted(members, key=lambda lab: (-len(members[lab]), lab))
    out = np.empty(n, dtype=np.int64)
    for new_id, lab in enumerate(order):
        out[members[lab]] = new_id
    return out, len(order)


def cluster_scan(
    patch_ids: list[str], features: np.ndarray, cfg: SomConfig, scan_id: str
) -> ClusterModel:
    """Train, assign, and merge for one scan's descriptors."""
    weights = som_train(features, cfg)
    raw = som_assign(features, weights)
    labels, count = merge_small_clusters(features, raw, cfg.min_cluster_fraction)
    vr = variance_ratio(features, labels)
    return ClusterModel(
        scan_id=scan_id,
        map_side=cfg.map_side,
        patch_ids=list(patch_ids),
        labels=labels,
        cluster_count=count,
        variance_ratio=vr,
        seed=cfg.seed,
        weights=weights,
    )


def save_cluster_model(model: ClusterModel, path: str | Path) -> None:
    infinite = math.isinf(model.variance_ratio)
    doc = {
        "format": "psel-clusters",
        "version": 1,
        "scan_id": model.scan_id,
        "map_side": model.map_side,
        "cluster_count": model.cluster_count,
        "cluster_sizes": model.cluster_sizes,
        "variance_ratio": None if infinite else model.variance_ratio,
        "variance_ratio_infinite": infinite,
        "seed": model.seed,
        "labels": {pid: int(lab) for pid, lab in zip(model.patch_ids, model.labels)},
    }
    atomic_write_json(path, doc)


def load_cluster_model(path: str | Path) -> ClusterModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "psel-clusters" or doc.get("version") != 1:
        raise InputFormatError(f"{path}: not a version-1 cluster model file")
    items = sorted(doc["labels"].items())
    patch_ids = [pid for pid, _ in items]
    labels = np.asarray([lab for _, lab in items], dtype=np.int64)
    vr = math.inf if doc["variance_ratio_infinite"] else float(doc["variance_ratio"])
    return ClusterModel(
        scan_id=doc["scan_id"],
        map_side=int(doc["map_side"]),
        patch_ids=patch_ids,
        labels=labels,
        cluster_count=int(doc["cluster_count"]),
        variance_ratio=vr,
        seed=int(doc["seed"]),
        weights=None,
    )
