"""End-to-end tests driving the command line against a tiny corpus."""

import hashlib
import json

import numpy as np
import pytest

from patchsieve import cli
from patchsieve.features import (
    Descriptor,
    DescriptorKind,
    read_features,
    write_features,
)
from patchsieve.gmm import load_selection_sets, selection_target
from patchsieve.som import load_cluster_model
from patchsieve.synthetic import SyntheticCorpusConfig, generate_corpus

SMALL = dict(
    scans=3, grid=(4, 4), query_grid=(2, 2),
    patch_size=32, blend_fraction=0.1, white_cells=2, seed=11,
)
# per scan: 16 cells, 2 white -> 14 retained; queries: 4 clean cells each
KEPT_PER_SCAN = 14
KEPT_TOTAL = 3 * KEPT_PER_SCAN
N_QUERIES = 3 * 4


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


def last_error(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)["error"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full CLI run; tests inspect the shared artifacts read-only."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    generate_corpus(SyntheticCorpusConfig(**SMALL), corpus)

    p = {
        "root": root,
        "corpus": corpus,
        "truth": corpus / "truth.csv",
        "tiles": root / "tiles",
        "qtiles": root / "qtiles",
        "features": root / "features.psel",
        "qfeatures": root / "qfeatures.psel",
        "clusters": root / "clusters",
        "selection": root / "sel.json",
        "index": root / "index.psidx",
        "results": root / "results.csv",
        "report": root / "report.json",
    }
    steps = [
        ("tile", "--images", corpus / "images", "--out", p["tiles"],
         "--patch-size", 32, "--stride", 32, "--downsample-to", 16),
        ("tile", "--images", corpus / "queries", "--out", p["qtiles"],
         "--patch-size", 32, "--stride", 32, "--downsample-to", 16),
        ("extract-lbp", "--tiles", p["tiles"], "--out", p["features"]),
        ("extract-lbp", "--tiles", p["qtiles"], "--out", p["qfeatures"]),
        ("cluster", "--features", p["features"], "--out", p["clusters"],
         "--map-side", 3, "--epochs", 5),
        ("select", "--features", p["features"], "--clusters", p["clusters"],
         "--out", p["selection"], "--fraction", 0.2, "--method", "gmm"),
        ("index", "--features", p["features"], "--out", p["index"]),
        ("search", "--index", p["index"], "--queries", p["qfeatures"],
         "--out", p["results"], "--k", 1),
        ("eval", "--results", p["results"], "--truth", p["truth"],
         "--out", p["report"]),
    ]
    for step in steps:
        rc = run_cli(*step, "--seed", 7)
        assert rc == 0, f"step {step[0]} failed"
    return p


# ----------------------------------------------------------- happy path


def test_pipeline_artifacts_exist(pipeline):
    for key in ("features", "qfeatures", "selection", "index", "results", "report"):
        assert pipeline[key].is_file()
    assert (pipeline["tiles"] / "manifest.json").is_file()
    assert (pipeline["clusters"] / "run.json").is_file()
    for key in ("features", "selection", "index", "results", "report"):
        assert (pipeline[key].parent / (pipeline[key].name + ".run.json")).is_file()


def test_tile_stdout_reports_retention(pipeline, tmp_path, capsys):
    rc = run_cli("tile", "--images", pipeline["corpus"] / "images",
                 "--out", tmp_path / "t", "--patch-size", 32, "--stride", 32,
                 "--downsample-to", 16)
    assert rc == 0
    out = capsys.readouterr().out
    assert f"tiled 3 scans: {KEPT_TOTAL}/48 patches retained" in out


def test_extracted_features_match_manifest(pipeline):
    descriptors = read_features(pipeline["features"])
    assert len(descriptors) == KEPT_TOTAL
    assert all(d.kind == DescriptorKind.lbp36 and d.dim == 36 for d in descriptors)
    manifest = json.loads((pipeline["tiles"] / "manifest.json").read_text())
    retained = {e["id"] for e in manifest["patches"] if e["retained"]}
    assert {d.patch_id for d in descriptors} == retained


def test_run_manifest_contents(pipeline):
    doc = json.loads((pipeline["root"] / "features.psel.run.json").read_text())
    assert doc["format"] == "psel-run" and doc["version"] == 1
    assert doc["command"] == "extract-lbp"
    assert doc["seed"] == 7
    assert doc["versions"]["numpy"] == np.__version__
    assert doc["inputs"]["tiles"]["manifest_sha256"] == hashlib.sha256(
        (pipeline["tiles"] / "manifest.json").read_bytes()
    ).hexdigest()
    assert doc["outputs"]["features"]["sha256"] == hashlib.sha256(
        pipeline["features"].read_bytes()
    ).hexdigest()
    import datetime

    datetime.datetime.fromisoformat(doc["created_at"])  # must parse


def test_cluster_models_cover_all_scans(pipeline):
    for s in range(3):
        model = load_cluster_model(pipeline["clusters"] / f"scan{s}.json")
        assert model.scan_id == f"scan{s}"
        assert model.cluster_count >= 1
        assert len(model.patch_ids) == KEPT_PER_SCAN


def test_selection_counts_per_scan(pipeline):
    sets = load_selection_sets(pipeline["selection"])
    assert [s.scan_id for s in sets] == ["scan0", "scan1", "scan2"]
    target = selection_target(0.2, KEPT_PER_SCAN)
    for s in sets:
        assert len(s.retained) == target
        assert s.retained == sorted(s.retained)
        assert all(pid.startswith(s.scan_id) for pid in s.retained)


def test_search_and_eval_outputs(pipeline, tmp_path, capsys):
    lines = pipeline["results"].read_text().splitlines()
    assert lines[0] == "query_id,rank,patch_id,scan_id,distance"
    assert len(lines) == 1 + N_QUERIES
    report = json.loads(pipeline["report"].read_text())
    assert report["format"] == "psel-eval"
    assert report["n_queries"] == N_QUERIES
    assert 0.0 <= report["eta_total"] <= report["eta_p"] <= 1.0

    rc = run_cli("eval", "--results", pipeline["results"],
                 "--truth", pipeline["truth"], "--out", tmp_path / "r.json")
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("eta_p=") and f"over {N_QUERIES} queries" in out


# --------------------------------------------------------- determinism


def test_select_rerun_is_byte_identical(pipeline, tmp_path):
    out = tmp_path / "sel.json"
    rc = run_cli("select", "--features", pipeline["features"],
                 "--clusters", pipeline["clusters"], "--out", out,
                 "--fraction", 0.2, "--method", "gmm", "--seed", 7)
    assert rc == 0
    assert out.read_bytes() == pipeline["selection"].read_bytes()


def test_jobs_count_does_not_change_outputs(pipeline, tmp_path):
    sel = tmp_path / "sel.json"
    res = tmp_path / "results.csv"
    assert run_cli("select", "--features", pipeline["features"],
                   "--clusters", pipeline["clusters"], "--out", sel,
                   "--fraction", 0.2, "--method", "gmm", "--seed", 7,
                   "--jobs", 3) == 0
    assert run_cli("search", "--index", pipeline["index"],
                   "--queries", pipeline["qfeatures"], "--out", res,
                   "--k", 1, "--seed", 7, "--jobs", 3) == 0
    assert sel.read_bytes() == pipeline["selection"].read_bytes()
    assert res.read_bytes() == pipeline["results"].read_bytes()


def test_jobs_env_variable_is_honored(pipeline, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PATCHSIEVE_JOBS", "2")
    res = tmp_path / "results.csv"
    assert run_cli("search", "--index", pipeline["index"],
                   "--queries", pipeline["qfeatures"], "--out", res,
                   "--k", 1, "--seed", 7) == 0
    assert res.read_bytes() == pipeline["results"].read_bytes()

    monkeypatch.setenv("PATCHSIEVE_JOBS", "many")
    assert run_cli("search", "--index", pipeline["index"],
                   "--queries", pipeline["qfeatures"], "--out", res,
                   "--k", 1) == 1
    assert last_error(capsys)["type"] == "UsageError"


def test_seed_changes_random_selection(pipeline, tmp_path):
    outs = []
    for seed in (7, 8):
        out = tmp_path / f"sel{seed}.json"
        assert run_cli("select", "--features", pipeline["features"],
                       "--clusters", pipeline["clusters"], "--out", out,
                       "--fraction", 0.5, "--method", "random",
                       "--seed", seed) == 0
        outs.append([s.retained for s in load_selection_sets(out)])
    assert outs[0] != outs[1]


def test_nearest_mean_criterion_runs(pipeline, tmp_path):
    out = tmp_path / "sel.json"
    assert run_cli("select", "--features", pipeline["features"],
                   "--clusters", pipeline["clusters"], "--out", out,
                   "--fraction", 0.2, "--method", "gmm",
                   "--criterion", "nearest-mean", "--seed", 7) == 0
    sets = load_selection_sets(out)
    assert sum(len(s.retained) for s in sets) == 3 * selection_target(0.2, KEPT_PER_SCAN)


# ------------------------------------------------------ ingest-features


def test_ingest_features_roundtrip(pipeline, tmp_path, capsys):
    out = tmp_path / "copy.psel"
    rc = run_cli("ingest-features", "--in", pipeline["features"], "--out", out,
                 "--manifest", pipeline["tiles"] / "manifest.json",
                 "--expect-kind", "lbp36", "--expect-dim", 36)
    assert rc == 0
    assert f"ingested {KEPT_TOTAL} lbp36 descriptors (dim 36)" in capsys.readouterr().out
    assert out.read_bytes() == pipeline["features"].read_bytes()


def test_ingest_expectation_mismatches(pipeline, tmp_path, capsys):
    out = tmp_path / "copy.psel"
    rc = run_cli("ingest-features", "--in", pipeline["features"], "--out", out,
                 "--expect-kind", "deep4096")
    assert rc == 2
    err = last_error(capsys)
    assert err["type"] == "InputFormatError" and err["exit_code"] == 2

    rc = run_cli("ingest-features", "--in", pipeline["features"], "--out", out,
                 "--expect-dim", 4096)
    assert rc == 2


def test_ingest_manifest_mismatch(pipeline, tmp_path, capsys):
    rc = run_cli("ingest-features", "--in", pipeline["features"],
                 "--out", tmp_path / "copy.psel",
                 "--manifest", pipeline["qtiles"] / "manifest.json")
    assert rc == 2
    assert "disagree" in last_error(capsys)["message"]


# ---------------------------------------------------------------- pca


def test_pca_fit_then_apply(pipeline, tmp_path, capsys):
    model = tmp_path / "model.json"
    reduced = tmp_path / "reduced.psel"
    rc = run_cli("pca", "--features", pipeline["features"],
                 "--out-features", reduced, "--out-model", model,
                 "--retained-fraction", 0.95, "--seed", 7)
    assert rc == 0
    assert capsys.readouterr().out.startswith("pca: 36 -> ")
    rows = read_features(reduced)
    assert all(d.kind == DescriptorKind.pca_reduced for d in rows)
    k = rows[0].dim
    assert 1 <= k <= 36

    qreduced = tmp_path / "qreduced.psel"
    assert run_cli("pca", "--features", pipeline["qfeatures"],
                   "--out-features", qreduced, "--model", model) == 0
    assert all(d.dim == k for d in read_features(qreduced))


def test_pca_flag_misuse(pipeline, tmp_path, capsys):
    model = tmp_path / "model.json"
    rc = run_cli("pca", "--features", pipeline["features"],
                 "--out-features", tmp_path / "a.psel")
    assert rc == 1  # neither --model nor --out-model
    rc = run_cli("pca", "--features", pipeline["features"],
                 "--out-features", tmp_path / "a.psel",
                 "--out-model", model, "--model", model)
    assert rc == 1
    assert run_cli("pca", "--features", pipeline["features"],
                   "--out-features", tmp_path / "b.psel",
                   "--out-model", model) == 0
    rc = run_cli("pca", "--features", pipeline["features"],
                 "--out-features", tmp_path / "c.psel",
                 "--model", model, "--retained-fraction", 0.5)
    assert rc == 1
    assert last_error(capsys)["type"] == "UsageError"


def test_pca_apply_dim_mismatch(pipeline, tmp_path, capsys):
    model = tmp_path / "model.json"
    assert run_cli("pca", "--features", pipeline["features"],
                   "--out-features", tmp_path / "a.psel",
                   "--out-model", model) == 0
    narrow = tmp_path / "narrow.psel"
    write_features(
        [Descriptor("a_x0_y0", DescriptorKind.pca_reduced, np.ones(5, np.float32))],
        narrow,
    )
    rc = run_cli("pca", "--features", narrow,
                 "--out-features", tmp_path / "b.psel", "--model", model)
    assert rc == 2
    assert last_error(capsys)["type"] == "InputFormatError"


# --------------------------------------------------------- error paths


def test_usage_errors_exit_1(capsys):
    assert run_cli() == 1
    assert last_error(capsys)["type"] == "UsageError"
    assert run_cli("no-such-command") == 1
    assert run_cli("tile", "--bogus-flag") == 1
    assert run_cli("search", "--index", "x") == 1  # missing required --out
    assert run_cli("select", "--out", "x", "--method", "gmm") == 1
    assert run_cli("select", "--out", "x", "--fraction", 0.2,
                   "--method", "bogus") == 1


def test_missing_input_exits_1(tmp_path, capsys):
    rc = run_cli("index", "--features", tmp_path / "absent.psel",
                 "--out", tmp_path / "x.psidx")
    assert rc == 1
    assert last_error(capsys)["type"] == "FileNotFoundError"


def test_truncated_features_exit_2(pipeline, tmp_path, capsys):
    blob = pipeline["features"].read_bytes()
    bad = tmp_path / "bad.psel"
    bad.write_bytes(blob[:-10])
    rc = run_cli("index", "--features", bad, "--out", tmp_path / "x.psidx")
    assert rc == 2
    assert last_error(capsys)["type"] == "TruncatedPayloadError"


def test_jobs_flag_validation(capsys):
    assert run_cli("tile", "--images", "x", "--out", "y", "--jobs", 0) == 1
    assert last_error(capsys)["type"] == "UsageError"


def test_version_and_help_exit_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("--version")
    assert exc.value.code == 0
    assert "patchsieve" in capsys.readouterr().out
    with pytest.raises(SystemExit) as exc:
        run_cli("--help")
    assert exc.value.code == 0


# -------------------------------------------------------------- config


def test_config_file_supplies_paths_and_seed(pipeline, tmp_path):
    cfg = {
        "seed": 7,
        "paths": {
            "features": str(pipeline["features"]),
            "clusters": str(pipeline["clusters"]),
        },
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "sel.json"
    rc = run_cli("select", "--config", cfg_path, "--out", out,
                 "--fraction", 0.2, "--method", "gmm")
    assert rc == 0
    assert out.read_bytes() == pipeline["selection"].read_bytes()


def test_config_rejections(tmp_path, capsys):
    cases = [
        '{"seed": 1, "bogus": {}}',
        '{"som": {"seed": 3}}',
        '{"seed": true}',
        '{"lbp": 5}',
        "not json",
    ]
    for text in cases:
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(text)
        rc = run_cli("select", "--config", cfg_path, "--out", tmp_path / "s.json",
                     "--fraction", 0.2, "--method", "gmm")
        assert rc == 2, text
        assert last_error(capsys)["exit_code"] == 2


# --------------------------------------------------------------- sweep


def sweep_tags():
    fractions = ["0p1", "0p15", "0p2", "0p3", "0p4", "0p5"]
    return [f"lbp36_{m}_{f}" for m in ("gmm", "random") for f in fractions]


def test_sweep_default_grid(pipeline, tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = run_cli("sweep", "--features", pipeline["features"],
                 "--clusters", pipeline["clusters"],
                 "--queries", pipeline["qfeatures"],
                 "--truth", pipeline["truth"], "--out", out,
                 "--k", 1, "--seed", 7)
    assert rc == 0
    assert "sweep complete: 12 rows" in capsys.readouterr().out

    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "fraction,method,feature,eta_p,eta_w,eta_total"
    assert len(lines) == 13
    fields = [line.split(",") for line in lines[1:]]
    assert [f[0] for f in fields] == ["0.1", "0.15", "0.2", "0.3", "0.4", "0.5"] * 2
    assert [f[1] for f in fields] == ["gmm"] * 6 + ["random"] * 6
    assert all(f[2] == "lbp36" for f in fields)
    for tag in sweep_tags():
        assert (out / "selections" / f"{tag}.json").is_file()
        assert (out / "results" / f"{tag}.csv").is_file()
        assert (out / "reports" / f"{tag}.json").is_file()
    assert (out / "run.json").is_file()


def test_sweep_rerun_is_byte_identical(pipeline, tmp_path):
    args = ("sweep", "--features", pipeline["features"],
            "--clusters", pipeline["clusters"],
            "--queries", pipeline["qfeatures"],
            "--truth", pipeline["truth"], "--k", 1, "--seed", 7,
            "--fractions", "0.1,0.3", "--methods", "gmm,random")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(*args, "--out", a) == 0
    assert run_cli(*args, "--out", b) == 0
    rel = sorted(
        p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "run.json"
    )
    assert rel  # sweep.csv plus per-tag artifacts
    for r in rel:
        assert (a / r).read_bytes() == (b / r).read_bytes(), r


def test_sweep_flag_validation(pipeline, tmp_path, capsys):
    base = ("sweep", "--features", pipeline["features"],
            "--clusters", pipeline["clusters"],
            "--queries", pipeline["qfeatures"],
            "--truth", pipeline["truth"], "--out", tmp_path / "s")
    assert run_cli(*base, "--fractions", "0.5,abc") == 1
    assert run_cli(*base, "--fractions", "0.5,0.5") == 1
    assert run_cli(*base, "--fractions", "1.5") == 1
    assert run_cli(*base, "--methods", "gmm,bogus") == 1
    assert run_cli("sweep", "--features", pipeline["features"],
                   "--clusters", pipeline["clusters"],
                   "--queries", pipeline["qfeatures"],
                   "--queries", pipeline["qfeatures"],
                   "--truth", pipeline["truth"], "--out", tmp_path / "s") == 1
    assert last_error(capsys)["type"] == "UsageError"
