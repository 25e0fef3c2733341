"""Command line pipeline driver.

Every subcommand validates its inputs, writes its artifact atomically,
and drops a JSON run manifest beside it recording input hashes, the
effective config, the seed, and library versions. Artifacts themselves
carry no timestamps, so reruns with the same config and seed are
byte-identical; wall-clock time lives only in run manifests.

On failure a machine-readable JSON object goes to stderr and the exit
code is 1 for usage problems, 2 for malformed inputs, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, derive_seed, load_config
from .errors import InputFormatError, NumericalError, PatchSieveError, UsageError
from .evaluation import (
    evaluate,
    load_truth_csv,
    save_report,
    sweep_report,
    top1_predictions,
)
from .features import (
    Descriptor,
    DescriptorKind,
    descriptor_matrix,
    load_pca_model,
    parse_patch_id,
    pca_fit,
    pca_transform,
    read_features,
    save_pca_model,
    write_features,
)
from .gmm import (
    SelectionSet,
    combine_selections,
    load_selection_sets,
    save_selection_sets,
    select_gmm,
    select_random,
)
from .ioutil import atomic_write_json, atomic_write_text, sha256_file
from .lbp import lbp_descriptor
from .retrieval import build_index, load_index, query, results_to_csv, save_index
from .som import ClusterModel, cluster_scan, load_cluster_model, save_cluster_model
from .tiling import Patch, load_raster, tile_to_directory

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}
TILES_MANIFEST_FORMAT = "psel-tiles"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _emit_error(exc: BaseException, exit_code: int) -> None:
    doc = {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": exit_code,
        }
    }
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    try:
        _run(sys.argv[1:] if argv is None else list(argv))
        return 0
    except PatchSieveError as exc:
        _emit_error(exc, exc.exit_code)
        return exc.exit_code
    except (ValueError, FileNotFoundError, NotADirectoryError, IsADirectoryError) as exc:
        _emit_error(exc, 1)
        return 1
    except np.linalg.LinAlgError as exc:
        _emit_error(exc, 3)
        return 3


def _run(argv: list[str]) -> None:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        raise UsageError("a subcommand is required (see --help)")

    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    jobs = _effective_jobs(args.jobs)

    handler = _HANDLERS[args.command]
    handler(args, cfg, jobs)


def _effective_jobs(flag_value: int | None) -> int:
    if flag_value is None:
        raw = os.environ.get("PATCHSIEVE_JOBS", "1")
        try:
            flag_value = int(raw)
        except ValueError:
            raise UsageError(f"PATCHSIEVE_JOBS must be an integer, got {raw!r}")
    if flag_value < 1:
        raise UsageError(f"--jobs must be >= 1, got {flag_value}")
    return flag_value


def _thread_map(fn, items, jobs: int) -> list:
    """Order-preserving map; results do not depend on the job count."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _resolve(flag_value: str | None, config_value: str | None, name: str) -> str:
    value = flag_value if flag_value is not None else config_value
    if value is None:
        raise UsageError(f"--{name} is required (flag or config paths.{name})")
    return value


def _hash_entry(path: Path) -> dict:
    path = Path(path)
    if path.is_dir():
        entry: dict = {"path": str(path), "kind": "directory"}
        manifest = path / "manifest.json"
        if manifest.is_file():
            entry["manifest_sha256"] = sha256_file(manifest)
        return entry
    return {"path": str(path), "sha256": sha256_file(path)}


def _write_run_manifest(
    manifest_path: Path,
    command: str,
    cfg: PipelineConfig,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
    extra: dict | None = None,
) -> None:
    import PIL
    import scipy

    doc = {
        "format": "psel-run",
        "version": 1,
        "command": command,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {name: _hash_entry(p) for name, p in sorted(inputs.items())},
        "outputs": {name: _hash_entry(p) for name, p in sorted(outputs.items())},
        "versions": {
            "python": platform.python_version(),
            "patchsieve": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pillow": PIL.__version__,
        },
    }
    if extra:
        doc.update(extra)
    atomic_write_json(manifest_path, doc)


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")
    common.add_argument(
        "--jobs",
        type=int,
        metavar="N",
        help="worker threads (default: env PATCHSIEVE_JOBS or 1)",
    )

    parser = _Parser(prog="patchsieve", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--version", action="version", version=f"patchsieve {__version__}"
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser(
        "tile", parents=[common], help="cut scans into filtered patch tiles"
    )
    p.add_argument("--images", metavar="DIR", help="directory of scan images")
    p.add_argument("--out", required=True, metavar="DIR", help="tiles output directory")
    p.add_argument("--keep-dropped", action="store_true", help="also write background patch files")
    p.add_argument("--patch-size", type=int, metavar="PX")
    p.add_argument("--stride", type=int, metavar="PX")
    p.add_argument("--downsample-to", type=int, metavar="PX")
    p.add_argument("--bg-threshold", type=float, metavar="FRAC")
    p.add_argument("--bg-brightness-cutoff", type=int, metavar="LEVEL")

    p = sub.add_parser(
        "extract-lbp", parents=[common], help="compute LBP descriptors for tiles"
    )
    p.add_argument("--tiles", metavar="DIR", help="tiles directory with manifest.json")
    p.add_argument("--out", required=True, metavar="FILE", help="descriptor output file")

    p = sub.add_parser(
        "ingest-features",
        parents=[common],
        help="validate and canonicalize an externally produced descriptor file",
    )
    p.add_argument("--in", dest="infile", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--manifest", metavar="FILE", help="tiles manifest to check ids against")
    p.add_argument(
        "--expect-kind", choices=[k.name for k in DescriptorKind], metavar="KIND"
    )
    p.add_argument("--expect-dim", type=int, metavar="D")

    p = sub.add_parser(
        "pca", parents=[common], help="fit or apply a PCA reduction to descriptors"
    )
    p.add_argument("--features", metavar="FILE", help="input descriptor file")
    p.add_argument("--out-features", required=True, metavar="FILE")
    p.add_argument("--out-model", metavar="FILE", help="fit a model and save it here")
    p.add_argument("--model", metavar="FILE", help="apply this existing model")
    p.add_argument("--retained-fraction", type=float, metavar="FRAC")

    p = sub.add_parser(
        "cluster", parents=[common], help="cluster each scan's descriptors with a SOM"
    )
    p.add_argument("--features", metavar="FILE")
    p.add_argument("--out", required=True, metavar="DIR", help="cluster models directory")
    p.add_argument("--map-side", type=int, metavar="N")
    p.add_argument("--epochs", type=int, metavar="N")
    p.add_argument("--initial-learning-rate", type=float, metavar="LR")
    p.add_argument("--initial-neighborhood-radius", type=float, metavar="R")
    p.add_argument("--min-cluster-fraction", type=float, metavar="FRAC")

    p = sub.add_parser(
        "select", parents=[common], help="pick representative patches per cluster"
    )
    p.add_argument("--features", metavar="FILE")
    p.add_argument("--clusters", metavar="DIR")
    p.add_argument("--out", required=True, metavar="FILE", help="selection JSON output")
    p.add_argument("--fraction", type=float, required=True, metavar="FRAC")
    p.add_argument("--method", choices=["gmm", "random"], required=True)
    p.add_argument("--criterion", choices=["density", "nearest-mean"])

    p = sub.add_parser(
        "index", parents=[common], help="build a retrieval index over descriptors"
    )
    p.add_argument("--features", metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE", help="index output file")
    p.add_argument("--selection", metavar="FILE", help="restrict to this selection")

    p = sub.add_parser(
        "search", parents=[common], help="query an index with descriptors"
    )
    p.add_argument("--index", required=True, metavar="FILE")
    p.add_argument("--queries", metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE", help="results CSV output")
    p.add_argument("--k", type=int, metavar="K")

    p = sub.add_parser(
        "eval", parents=[common], help="score top-1 search results against truth"
    )
    p.add_argument("--results", required=True, metavar="FILE", help="search results CSV")
    p.add_argument("--truth", metavar="FILE", help="truth CSV (query_id,scan_id)")
    p.add_argument("--out", required=True, metavar="FILE", help="report JSON output")

    p = sub.add_parser(
        "sweep",
        parents=[common],
        help="run select/index/search/eval over fractions x methods",
    )
    p.add_argument("--features", action="append", metavar="FILE")
    p.add_argument("--clusters", action="append", metavar="DIR")
    p.add_argument("--queries", action="append", metavar="FILE")
    p.add_argument("--truth", metavar="FILE")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--fractions", metavar="F1,F2,...", help="override sweep fractions")
    p.add_argument("--methods", metavar="M1,M2,...", help="override sweep methods")
    p.add_argument("--criterion", choices=["density", "nearest-mean"])
    p.add_argument("--k", type=int, metavar="K")

    return parser


# ---------------------------------------------------------------- tile


def _tiling_overrides(args, base):
    updates = {}
    for attr in (
        "patch_size",
        "stride",
        "downsample_to",
        "bg_threshold",
        "bg_brightness_cutoff",
    ):
        value = getattr(args, attr)
        if value is not None:
            updates[attr] = value
    return dataclasses.replace(base, **updates) if updates else base


def _cmd_tile(args, cfg: PipelineConfig, jobs: int) -> None:
    images_dir = Path(_resolve(args.images, cfg.paths.images, "images"))
    out = Path(args.out)
    tiling_cfg = _tiling_overrides(args, cfg.tiling)

    files = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not files:
        raise InputFormatError(f"no image files found in {images_dir}")
    images: dict[str, np.ndarray] = {}
    for path in files:
        if path.stem in images:
            raise InputFormatError(f"duplicate scan id {path.stem!r} in {images_dir}")
        images[path.stem] = load_raster(path)

    manifest = tile_to_directory(images, tiling_cfg, out, keep_dropped=args.keep_dropped)
    cfg = dataclasses.replace(cfg, tiling=tiling_cfg)
    _write_run_manifest(
        out / "run.json",
        "tile",
        cfg,
        inputs={"images": images_dir},
        outputs={"manifest": out / "manifest.json"},
    )
    total = len(manifest["patches"])
    kept = sum(1 for e in manifest["patches"] if e["retained"])
    print(f"tiled {len(images)} scans: {kept}/{total} patches retained -> {out}")


# ---------------------------------------------------------- extract-lbp


def _load_tiles_manifest(tiles_dir: Path) -> dict:
    manifest_path = tiles_dir / "manifest.json"
    if not manifest_path.is_file():
        raise InputFormatError(f"no manifest.json in {tiles_dir}")
    doc = json.loads(manifest_path.read_text())
    if doc.get("format") != TILES_MANIFEST_FORMAT or doc.get("version") != 1:
        raise InputFormatError(f"{manifest_path} is not a tiles manifest")
    return doc


def _cmd_extract_lbp(args, cfg: PipelineConfig, jobs: int) -> None:
    tiles_dir = Path(_resolve(args.tiles, cfg.paths.tiles, "tiles"))
    manifest = _load_tiles_manifest(tiles_dir)
    entries = [e for e in manifest["patches"] if e["retained"]]
    if not entries:
        raise InputFormatError(f"manifest in {tiles_dir} has no retained patches")

    def one(entry: dict) -> Descriptor:
        pixels = load_raster(tiles_dir / entry["file"])
        patch = Patch(
            scan_id=entry["scan_id"],
            grid_x=entry["grid_x"],
            grid_y=entry["grid_y"],
            pixels=pixels,
            side=pixels.shape[0],
        )
        return lbp_descriptor(patch, cfg.lbp)

    descriptors = _thread_map(one, entries, jobs)
    write_features(descriptors, args.out)
    _write_run_manifest(
        Path(str(args.out) + ".run.json"),
        "extract-lbp",
        cfg,
        inputs={"tiles": tiles_dir},
        outputs={"features": Path(args.out)},
    )
    print(f"extracted {len(descriptors)} lbp36 descriptors -> {args.out}")


# ------------------------------------------------------ ingest-features


def _cmd_ingest_features(args, cfg: PipelineConfig, jobs: int) -> None:
    descriptors = read_features(args.infile)
    kind, dim = descriptors[0].kind, descriptors[0].dim
    if args.expect_kind is not None and kind.name != args.expect_kind:
        raise InputFormatError(
            f"descriptor kind is {kind.name!r}, expected {args.expect_kind!r}"
        )
    if args.expect_dim is not None and dim != args.expect_dim:
        raise InputFormatError(f"descriptor dim is {dim}, expected {args.expect_dim}")
    inputs = {"features": Path(args.infile)}
    if args.manifest:
        manifest_path = Path(args.manifest)
        doc = json.loads(manifest_path.read_text())
        if doc.get("format") != TILES_MANIFEST_FORMAT:
            raise InputFormatError(f"{manifest_path} is not a tiles manifest")
        expected = {e["id"] for e in doc["patches"] if e["retained"]}
        got = {d.patch_id for d in descriptors}
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise InputFormatError(
                f"feature ids disagree with manifest: {len(missing)} missing, "
                f"{len(extra)} unexpected"
                + (f", first missing {missing[0]!r}" if missing else "")
                + (f", first unexpected {extra[0]!r}" if extra else "")
            )
        inputs["manifest"] = manifest_path
    write_features(descriptors, args.out)
    _write_run_manifest(
        Path(str(args.out) + ".run.json"),
        "ingest-features",
        cfg,
        inputs=inputs,
        outputs={"features": Path(args.out)},
    )
    print(f"ingested {len(descriptors)} {kind.name} descriptors (dim {dim}) -> {args.out}")


# ------------------------------------------------------------------ pca


def _cmd_pca(args, cfg: PipelineConfig, jobs: int) -> None:
    if (args.model is None) == (args.out_model is None):
        raise UsageError("pass exactly one of --out-model (fit) or --model (apply)")
    features_path = _resolve(args.features, cfg.paths.features, "features")
    descriptors = read_features(features_path)
    X = descriptor_matrix(descriptors)

    inputs = {"features": Path(features_path)}
    outputs = {"features": Path(args.out_features)}
    if args.out_model is not None:
        fraction = (
            args.retained_fraction
            if args.retained_fraction is not None
            else cfg.pca.retained_fraction
        )
        model = pca_fit(X, fraction)
        save_pca_model(model, args.out_model)
        outputs["model"] = Path(args.out_model)
    else:
        if args.retained_fraction is not None:
            raise UsageError("--retained-fraction only applies when fitting")
        model = load_pca_model(args.model)
        inputs["model"] = Path(args.model)
        if X.shape[1] != model.input_dim:
            raise InputFormatError(
                f"features have dim {X.shape[1]}, model expects {model.input_dim}"
            )

    reduced = pca_transform(model, X)
    out_descriptors = [
        Descriptor(d.patch_id, DescriptorKind.pca_reduced, row.astype(np.float32))
        for d, row in zip(descriptors, reduced)
    ]
    write_features(out_descriptors, args.out_features)
    _write_run_manifest(
        Path(str(args.out_features) + ".run.json"),
        "pca",
        cfg,
        inputs=inputs,
        outputs=outputs,
        extra={"pca": {"k": model.k, "input_dim": model.input_dim}},
    )
    print(
        f"pca: {X.shape[1]} -> {model.k} dims at retained fraction "
        f"{model.retained_fraction:g} -> {args.out_features}"
    )


# -------------------------------------------------------------- cluster


def _group_by_scan(descriptors: list[Descriptor]) -> dict[str, list[Descriptor]]:
    groups: dict[str, list[Descriptor]] = {}
    for d in descriptors:
        groups.setdefault(parse_patch_id(d.patch_id)[0], []).append(d)
    return groups


def _scan_model_path(clusters_dir: Path, scan_id: str) -> Path:
    if "/" in scan_id or "\\" in scan_id or scan_id in (".", ".."):
        raise InputFormatError(f"scan id {scan_id!r} is not filesystem-safe")
    return clusters_dir / f"{scan_id}.json"


def _som_overrides(args, base):
    updates = {}
    for attr in (
        "map_side",
        "epochs",
        "initial_learning_rate",
        "initial_neighborhood_radius",
        "min_cluster_fraction",
    ):
        value = getattr(args, attr)
        if value is not None:
            updates[attr] = value
    return dataclasses.replace(base, **updates) if updates else base


def _cmd_cluster(args, cfg: PipelineConfig, jobs: int) -> None:
    features_path = _resolve(args.features, cfg.paths.features, "features")
    descriptors = read_features(features_path)
    som_base = _som_overrides(args, cfg.som)
    cfg = dataclasses.replace(cfg, som=som_base)
    groups = _group_by_scan(descriptors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(scan_id: str) -> tuple[str, int]:
        group = groups[scan_id]
        ids = [d.patch_id for d in group]
        X = descriptor_matrix(group)
        scan_cfg = dataclasses.replace(
            som_base, seed=derive_seed(cfg.seed, f"som:{scan_id}")
        )
        model = cluster_scan(ids, X, scan_cfg, scan_id)
        save_cluster_model(model, _scan_model_path(out, scan_id))
        return scan_id, model.cluster_count

    results = _thread_map(one, sorted(groups), jobs)
    _write_run_manifest(
        out / "run.json",
        "cluster",
        cfg,
        inputs={"features": Path(features_path)},
        outputs={"clusters": out},
        extra={"clusters_per_scan": {scan: count for scan, count in results}},
    )
    for scan_id, count in results:
        print(f"{scan_id}: {len(groups[scan_id])} patches -> {count} clusters")


# --------------------------------------------------------------- select


def _features_by_cluster(
    scan_id: str, group: list[Descriptor], model: ClusterModel
) -> dict[int, tuple[list[str], np.ndarray]]:
    file_ids = {d.patch_id for d in group}
    model_ids = set(model.patch_ids)
    if file_ids != model_ids:
        raise InputFormatError(
            f"cluster model for scan {scan_id!r} covers {len(model_ids)} ids, "
            f"features have {len(file_ids)}; sets differ"
        )
    row_by_id = {d.patch_id: d.values.astype(np.float64) for d in group}
    buckets: dict[int, list[str]] = {}
    for pid, label in zip(model.patch_ids, model.labels):
        buckets.setdefault(int(label), []).append(pid)
    return {
        label: (ids, np.stack([row_by_id[i] for i in ids]))
        for label, ids in sorted(buckets.items())
    }


def _select_for_scan(
    scan_id: str,
    fbc: dict[int, tuple[list[str], np.ndarray]],
    method: str,
    fraction: float,
    criterion: str,
    root_seed: int,
) -> SelectionSet:
    seed = derive_seed(root_seed, f"select:{method}:{fraction:g}:{scan_id}")
    if method == "gmm":
        return select_gmm(fbc, fraction, seed, scan_id=scan_id, criterion=criterion)
    return select_random(
        {label: ids for label, (ids, _) in fbc.items()},
        fraction,
        seed,
        scan_id=scan_id,
    )


def _cmd_select(args, cfg: PipelineConfig, jobs: int) -> None:
    features_path = _resolve(args.features, cfg.paths.features, "features")
    clusters_dir = Path(_resolve(args.clusters, cfg.paths.clusters, "clusters"))
    criterion = args.criterion or cfg.selection.criterion
    descriptors = read_features(features_path)
    groups = _group_by_scan(descriptors)

    def one(scan_id: str) -> SelectionSet:
        model = load_cluster_model(_scan_model_path(clusters_dir, scan_id))
        fbc = _features_by_cluster(scan_id, groups[scan_id], model)
        return _select_for_scan(
            scan_id, fbc, args.method, args.fraction, criterion, cfg.seed
        )

    selections = _thread_map(one, sorted(groups), jobs)
    save_selection_sets(selections, args.out)
    _write_run_manifest(
        Path(str(args.out) + ".run.json"),
        "select",
        cfg,
        inputs={"features": Path(features_path), "clusters": clusters_dir},
        outputs={"selection": Path(args.out)},
        extra={"selection": {"method": args.method, "fraction": args.fraction}},
    )
    kept = sum(len(s.retained) for s in selections)
    print(
        f"selected {kept}/{len(descriptors)} patches "
        f"({args.method}, fraction {args.fraction:g}) -> {args.out}"
    )


# ---------------------------------------------------------------- index


def _cmd_index(args, cfg: PipelineConfig, jobs: int) -> None:
    features_path = _resolve(args.features, cfg.paths.features, "features")
    descriptors = read_features(features_path)
    inputs = {"features": Path(features_path)}
    selection = None
    if args.selection:
        selection = combine_selections(load_selection_sets(args.selection), cfg.seed)
        inputs["selection"] = Path(args.selection)
    index = build_index(descriptors, selection, metadata={"root_seed": cfg.seed})
    save_index(index, args.out)
    _write_run_manifest(
        Path(str(args.out) + ".run.json"),
        "index",
        cfg,
        inputs=inputs,
        outputs={"index": Path(args.out)},
    )
    print(f"indexed {len(index)} descriptors ({index.kind.name}) -> {args.out}")


# --------------------------------------------------------------- search


def _run_queries(index, query_descriptors, k: int, jobs: int):
    if query_descriptors[0].kind != index.kind:
        raise InputFormatError(
            f"query kind {query_descriptors[0].kind.name!r} does not match "
            f"index kind {index.kind.name!r}"
        )
    pairs = [(d.patch_id, d.values) for d in query_descriptors]
    return _thread_map(lambda p: (p[0], query(index, p[1], k)), pairs, jobs)


def _cmd_search(args, cfg: PipelineConfig, jobs: int) -> None:
    index = load_index(args.index)
    queries_path = _resolve(args.queries, cfg.paths.queries, "queries")
    query_descriptors = read_features(queries_path)
    k = args.k if args.k is not None else cfg.retrieval.k
    results = _run_queries(index, query_descriptors, k, jobs)
    atomic_write_text(args.out, results_to_csv(results))
    _write_run_manifest(
        Path(str(args.out) + ".run.json"),
        "search",
        cfg,
        inputs={"index": Path(args.index), "queries": Path(queries_path)},
        outputs={"results": Path(args.out)},
        extra={"k": k},
    )
    print(f"searched {len(results)} queries (k={k}) -> {args.out}")


# ----------------------------------------------------------------- eval


def _cmd_eval(args, cfg: PipelineConfig, jobs: int) -> None:
    from .retrieval import load_results_csv

    truth_path = _resolve(args.truth, cfg.paths.truth, "truth")
    results = load_results_csv(args.results)
    report = evaluate(top1_predictions(results), load_truth_csv(truth_path))
    save_report(report, args.out)
    _write_run_manifest(
        Path(str(args.out) + ".run.json"),
        "eval",
        cfg,
        inputs={"results": Path(args.results), "truth": Path(truth_path)},
        outputs={"report": Path(args.out)},
    )
    print(
        f"eta_p={report.eta_p:.4f} eta_w={report.eta_w:.4f} "
        f"eta_total={report.eta_total:.4f} over {report.n_queries} queries"
    )


# ---------------------------------------------------------------- sweep


def _parse_fractions(raw: str | None, default: tuple[float, ...]) -> tuple[float, ...]:
    if raw is None:
        return tuple(default)
    try:
        fractions = tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise UsageError(f"--fractions must be comma-separated floats, got {raw!r}")
    for f in fractions:
        if not (0.0 < f <= 1.0):
            raise UsageError(f"sweep fraction must be in (0, 1], got {f}")
    if len(set(fractions)) != len(fractions):
        raise UsageError("duplicate sweep fractions")
    return fractions


def _parse_methods(raw: str | None, default: tuple[str, ...]) -> tuple[str, ...]:
    if raw is None:
        return tuple(default)
    methods = tuple(raw.split(","))
    for m in methods:
        if m not in ("gmm", "random"):
            raise UsageError(f"unknown sweep method {m!r}")
    if len(set(methods)) != len(methods):
        raise UsageError("duplicate sweep methods")
    return methods


def _fraction_tag(fraction: float) -> str:
    return format(fraction, "g").replace(".", "p")


def _cmd_sweep(args, cfg: PipelineConfig, jobs: int) -> None:
    features_list = args.features or (
        [cfg.paths.features] if cfg.paths.features else None
    )
    clusters_list = args.clusters or (
        [cfg.paths.clusters] if cfg.paths.clusters else None
    )
    queries_list = args.queries or ([cfg.paths.queries] if cfg.paths.queries else None)
    if not (features_list and clusters_list and queries_list):
        raise UsageError("--features, --clusters, and --queries are required")
    if not (len(features_list) == len(clusters_list) == len(queries_list)):
        raise UsageError(
            "--features, --clusters, and --queries must be given the same number of times"
        )
    truth_path = _resolve(args.truth, cfg.paths.truth, "truth")
    fractions = _parse_fractions(args.fractions, cfg.selection.fractions)
    methods = _parse_methods(args.methods, cfg.selection.methods)
    criterion = args.criterion or cfg.selection.criterion
    k = args.k if args.k is not None else cfg.retrieval.k

    out = Path(args.out)
    for sub in ("selections", "results", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    truth = load_truth_csv(truth_path)

    rows = []
    seen_kinds: set[str] = set()
    inputs = {"truth": Path(truth_path)}
    for i, (fpath, cdir, qpath) in enumerate(
        zip(features_list, clusters_list, queries_list)
    ):
        descriptors = read_features(fpath)
        kind = descriptors[0].kind
        if kind.name in seen_kinds:
            raise InputFormatError(
                f"duplicate descriptor kind {kind.name!r} across --features inputs"
            )
        seen_kinds.add(kind.name)
        query_descriptors = read_features(qpath)
        groups = _group_by_scan(descriptors)
        clusters_dir = Path(cdir)
        fbc_by_scan = {}
        for scan_id in sorted(groups):
            model = load_cluster_model(_scan_model_path(clusters_dir, scan_id))
            fbc_by_scan[scan_id] = _features_by_cluster(
                scan_id, groups[scan_id], model
            )
        inputs[f"features[{i}]"] = Path(fpath)
        inputs[f"clusters[{i}]"] = clusters_dir
        inputs[f"queries[{i}]"] = Path(qpath)

        for method in methods:
            for fraction in fractions:
                selections = [
                    _select_for_scan(
                        scan_id, fbc_by_scan[scan_id], method, fraction, criterion, cfg.seed
                    )
                    for scan_id in sorted(groups)
                ]
                tag = f"{kind.name}_{method}_{_fraction_tag(fraction)}"
                save_selection_sets(selections, out / "selections" / f"{tag}.json")
                index = build_index(
                    descriptors,
                    combine_selections(selections, cfg.seed),
                    metadata={"root_seed": cfg.seed},
                )
                results = _run_queries(index, query_descriptors, k, jobs)
                atomic_write_text(
                    out / "results" / f"{tag}.csv", results_to_csv(results)
                )
                report = evaluate(top1_predictions(results), truth)
                save_report(report, out / "reports" / f"{tag}.json")
                rows.append((fraction, method, kind.name, report))

    atomic_write_text(out / "sweep.csv", sweep_report(rows))
    _write_run_manifest(
        out / "run.json",
        "sweep",
        cfg,
        inputs=inputs,
        outputs={"sweep": out / "sweep.csv"},
        extra={
            "sweep": {
                "fractions": list(fractions),
                "methods": list(methods),
                "criterion": criterion,
                "k": k,
            }
        },
    )
    print(f"sweep complete: {len(rows)} rows -> {out / 'sweep.csv'}")


_HANDLERS = {
    "tile": _cmd_tile,
    "extract-lbp": _cmd_extract_lbp,
    "ingest-features": _cmd_ingest_features,
    "pca": _cmd_pca,
    "cluster": _cmd_cluster,
    "select": _cmd_select,
    "index": _cmd_index,
    "search": _cmd_search,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
}


if __name__ == "__main__":
    sys.exit(main())
