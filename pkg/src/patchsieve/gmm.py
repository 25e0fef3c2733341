"""Gaussian mixture fitting (EM, diagonal covariances) and per-cluster
representative patch selection, plus the seeded random baseline.

Selection keeps the global retained count exact: round(fraction*n) is
apportioned across clusters by the largest-remainder rule in integer
arithmetic, then each cluster contributes its quota of highest mixture
log-density members (ties broken by lower patch id).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import InputFormatError, NumericalError
from .ioutil import atomic_write_json

VARIANCE_FLOOR = 1e-6
SELECTION_FORMAT = "psel-selection"
SELECTION_VERSION = 1


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,), sums to 1
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d) diagonal entries, >= VARIANCE_FLOOR
    log_likelihood_trace: list[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return int(self.means.shape[0])


def _component_log_density(X: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    d = X.shape[1]
    const = d * math.log(2.0 * math.pi) + float(np.sum(np.log(var)))
    maha = (((X - mean) ** 2) / var).sum(axis=1)
    return -0.5 * (const + maha)


def _log_joint(model_weights, means, covariances, X) -> np.ndarray:
    """log(pi_k) + log N(x | mu_k, var_k) for every (row, component)."""
    K = means.shape[0]
    lp = np.empty((X.shape[0], K), dtype=np.float64)
    for k in range(K):
        lp[:, k] = _component_log_density(X, means[k], covariances[k])
    with np.errstate(divide="ignore"):
        lp += np.log(model_weights)[None, :]
    return lp


def mixture_log_density(model: GmmModel, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    return logsumexp(_log_joint(model.weights, model.means, model.covariances, X), axis=1)


def _farthest_point_init(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded first pick, then deterministic farthest-point means."""
    first = int(rng.integers(0, X.shape[0]))
    chosen = [first]
    dist = ((X - X[first]) ** 2).sum(axis=1)
    for _ in range(1, K):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def gmm_fit(
    features: np.ndarray,
    n_components: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-5,
) -> GmmModel:
    """EM for a diagonal-covariance Gaussian mixture.

    The log-likelihood trace is non-decreasing (up to ~1e-7 numerical
    noise); iteration stops when the improvement drops below ``tol``.
    Covariance entries are floored at 1e-6.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be an m x d matrix")
    m, d = X.shape
    if not (1 <= n_components <= m):
        raise ValueError(f"need m >= K >= 1, got m={m}, K={n_components}")
    if not np.all(np.isfinite(X)):
        raise NumericalError("features contain non-finite values")

    rng = np.random.default_rng(seed)
    means = _farthest_point_init(X, n_components, rng)
    variances = np.tile(np.maximum(X.var(axis=0), VARIANCE_FLOOR), (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)

    trace: list[float] = []
    prev_ll = None
    for _ in range(max_iter):
        joint = _log_joint(weights, means, variances, X)
        norm = logsumexp(joint, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if prev_ll is not None and ll - prev_ll < tol:
            break
        prev_ll = ll

        resp = np.exp(joint - norm[:, None])
        nk = resp.sum(axis=0)
        for k in range(n_components):
            if nk[k] < 1e-10:
                # dead component: freeze its parameters, weight follows nk
                continue
            mean_k = resp[:, k] @ X / nk[k]
            var_k = resp[:, k] @ ((X - mean_k) ** 2) / nk[k]
            means[k] = mean_k
            variances[k] = np.maximum(var_k, VARIANCE_FLOOR)
        weights = nk / nk.sum()

    return GmmModel(
        weights=weights, means=means, covariances=variances, log_likelihood_trace=trace
    )


def components_for_cluster(cluster_size: int) -> int:
    """K heuristic keeping EM well conditioned on small clusters."""
    return min(3, math.ceil(cluster_size / 20))


@dataclass
class SelectionSet:
    """Retained patch ids for one scan at a target fraction."""

    scan_id: str
    method: str  # "gmm" | "random"
    fraction: float
    retained: list[str]
    seed: int

    def __post_init__(self):
        if self.method not in ("gmm", "random"):
            raise ValueError(f"unknown selection method {self.method!r}")
        if len(set(self.retained)) != len(self.retained):
            raise ValueError("selection contains duplicate patch ids")


def selection_target(fraction: float, n: int) -> int:
    """round(fraction*n), halves up, nudged against IEEE representation
    error (0.15*30 evaluates below 4.5 in doubles but must round to 5)."""
    return int(math.floor(fraction * n + 0.5 + 1e-9))


def apportion_quotas(cluster_sizes: dict[int, int], target: int) -> dict[int, int]:
    """Largest-remainder apportionment of ``target`` across clusters
    proportional to size; exact in integer arithmetic.

    Remainder ties go to the larger cluster, then the lower cluster id.
    """
    n = sum(cluster_sizes.values())
    if n == 0:
        raise ValueError("no patches to apportion over")
    if not (0 <= target <= n):
        raise ValueError(f"target {target} outside [0, {n}]")
    base = {lab: target * sz // n for lab, sz in cluster_sizes.items()}
    leftover = target - sum(base.values())
    order = sorted(
        cluster_sizes,
        key=lambda lab: (-(target * cluster_sizes[lab] % n), -cluster_sizes[lab], lab),
    )
    for lab in order[:leftover]:
        base[lab] += 1
    return base


def _derived_seed(seed: int, label: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, label]))


def select_gmm(
    features_by_cluster: dict[int, tuple[list[str], np.ndarray]],
    fraction: float,
    seed: int,
    scan_id: str = "scan",
    criterion: str = "density",
) -> SelectionSet:
    """Keep the per-cluster quota of most representative patches.

    Representativeness is the fitted mixture's log-density at the patch
    ("density" criterion) or the negated distance to the nearest component
    mean ("nearest-mean"); ties fall back to the lower patch id.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not features_by_cluster:
        raise ValueError("empty cluster set")
    if criterion not in ("density", "nearest-mean"):
        raise ValueError(f"unknown criterion {criterion!r}")

    sizes = {lab: len(ids) for lab, (ids, _) in features_by_cluster.items()}
    n = sum(sizes.values())
    target = selection_target(fraction, n)
    quotas = apportion_quotas(sizes, target)

    retained: list[str] = []
    for lab in sorted(features_by_cluster):
        ids, feats = features_by_cluster[lab]
        feats = np.asarray(feats, dtype=np.float64)
        quota = quotas[lab]
        if quota == 0:
            continue
        if quota == len(ids):
            retained.extend(ids)
            continue
        k = components_for_cluster(len(ids))
        sub_seed = int(np.random.SeedSequence([seed, lab]).generate_state(1)[0])
        model = gmm_fit(feats, k, seed=sub_seed)
        if criterion == "density":
            scores = mixture_log_density(model, feats)
        else:
            d2 = ((feats[:, None, :] - model.means[None, :, :]) ** 2).sum(axis=2)
            scores = -d2.min(axis=1)
        ranked = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
        retained.extend(ids[i] for i in ranked[:quota])

    return SelectionSet(
        scan_id=scan_id,
        method="gmm",
        fraction=fraction,
        retained=sorted(retained),
        seed=seed,
    )


def select_random(
    patch_ids_by_cluster: dict[int, list[str]],
    fraction: float,
    seed: int,
    scan_id: str = "scan",
) -> SelectionSet:
    """Uniform per-cluster sampling without replacement at the same quotas."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not patch_ids_by_cluster:
        raise ValueError("empty cluster set")

    sizes = {lab: len(ids) for lab, ids in patch_ids_by_cluster.items()}
    target = selection_target(fraction, sum(sizes.values()))
    quotas = apportion_quotas(sizes, target)

    retained: list[str] = []
    for lab in sorted(patch_ids_by_cluster):
        ids = sorted(patch_ids_by_cluster[lab])
        quota = quotas[lab]
        if quota == 0:
            continue
        rng = _derived_seed(seed, lab)
        picks = rng.choice(len(ids), size=quota, replace=False)
        retained.extend(ids[i] for i in picks)

    return SelectionSet(
        scan_id=scan_id,
        method="random",
        fraction=fraction,
        retained=sorted(retained),
        seed=seed,
    )


def save_selection_sets(sets: list[SelectionSet], path: str | Path) -> None:
    """Persist one selection run (uniform method and fraction) as JSON."""
    if not sets:
        raise ValueError("nothing to save: empty selection list")
    methods = {s.method for s in sets}
    fractions = {s.fraction for s in sets}
    if len(methods) > 1 or len(fractions) > 1:
        raise ValueError("selection sets in one file must share method and fraction")
    doc = {
        "format": SELECTION_FORMAT,
        "version": SELECTION_VERSION,
        "method": sets[0].method,
        "fraction": sets[0].fraction,
        "scans": [
            {"scan_id": s.scan_id, "seed": s.seed, "retained": sorted(s.retained)}
            for s in sorted(sets, key=lambda s: s.scan_id)
        ],
    }
    atomic_write_json(path, doc)


def load_selection_sets(path: str | Path) -> list[SelectionSet]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SELECTION_FORMAT or doc.get("version") != SELECTION_VERSION:
        raise InputFormatError(f"not a selection file: {path}")
    return [
        SelectionSet(
            scan_id=entry["scan_id"],
            method=doc["method"],
            fraction=doc["fraction"],
            retained=list(entry["retained"]),
            seed=entry["seed"],
        )
        for entry in doc["scans"]
    ]


def combine_selections(sets: list[SelectionSet], seed: int = 0) -> SelectionSet:
    """Union of per-scan selections, for building one retrieval index."""
    if not sets:
        raise ValueError("nothing to combine: empty selection list")
    methods = {s.method for s in sets}
    fractions = {s.fraction for s in sets}
    if len(methods) > 1 or len(fractions) > 1:
        raise ValueError("cannot combine selections with mixed method or fraction")
    retained: list[str] = []
    for s in sets:
        retained.extend(s.retained)
    return SelectionSet(
        scan_id="all",
        method=sets[0].method,
        fraction=sets[0].fraction,
        retained=sorted(retained),
        seed=seed,
    )
