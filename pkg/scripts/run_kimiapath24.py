#!/usr/bin/env python3
"""Reproduce the LBP retrieval sweep on the KimiaPath24 corpus.

Expects a dataset directory with this layout (see README for how to
arrange the upstream download):

    DATASET/
      images/    24 whole-slide scans, any Pillow-readable format;
                 the file stem is the scan id
      queries/   the 1000x1000 test patches, one image per query
      truth.csv  header "query_id,scan_id"; query_id is the query
                 file stem

Tiling, feature extraction, and clustering results are cached in the
work directory, so interrupted runs resume where they left off.
"""

import argparse
import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from patchsieve.cli import main as patchsieve
from patchsieve.evaluation import load_truth_csv


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dataset", metavar="DIR",
                        default=os.environ.get("KIMIAPATH24_DIR"),
                        help="dataset directory (default: $KIMIAPATH24_DIR)")
    parser.add_argument("--work", required=True, metavar="DIR",
                        help="cache and output directory")
    parser.add_argument("--fractions", default="0.1,0.15,0.2,0.3,0.4,0.5,1.0")
    parser.add_argument("--methods", default="gmm,random")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    return parser.parse_args(argv)


def step(done_marker: Path, *argv) -> None:
    """Run one CLI command unless its output already exists."""
    command = " ".join(str(a) for a in argv)
    if done_marker.exists():
        print(f"cached: {command}")
        return
    print(f"running: {command}")
    rc = patchsieve([str(a) for a in argv])
    if rc != 0:
        raise SystemExit(rc)


def main(argv=None) -> int:
    args = parse_args(argv)
    if not args.dataset:
        raise SystemExit("pass --dataset or set KIMIAPATH24_DIR")
    dataset = Path(args.dataset)
    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    common = ("--seed", args.seed, "--jobs", args.jobs)

    step(work / "tiles" / "manifest.json",
         "tile", "--images", dataset / "images", "--out", work / "tiles", *common)
    step(work / "qtiles" / "manifest.json",
         "tile", "--images", dataset / "queries", "--out", work / "qtiles", *common)
    step(work / "features.psel",
         "extract-lbp", "--tiles", work / "tiles",
         "--out", work / "features.psel", *common)
    step(work / "queries.psel",
         "extract-lbp", "--tiles", work / "qtiles",
         "--out", work / "queries.psel", *common)
    step(work / "clusters" / "run.json",
         "cluster", "--features", work / "features.psel",
         "--out", work / "clusters", *common)

    # each query image is exactly one tile, so its id gains an _x0_y0 suffix
    truth_out = work / "truth.csv"
    if not truth_out.exists():
        truth = load_truth_csv(dataset / "truth.csv")
        lines = ["query_id,scan_id"]
        lines += [f"{q}_x0_y0,{scan}" for q, scan in sorted(truth.items())]
        truth_out.write_text("\n".join(lines) + "\n")

    step(work / "sweep" / "sweep.csv",
         "sweep", "--features", work / "features.psel",
         "--clusters", work / "clusters", "--queries", work / "queries.psel",
         "--truth", truth_out, "--out", work / "sweep",
         "--fractions", args.fractions, "--methods", args.methods,
         "--k", 1, *common)

    print((work / "sweep" / "sweep.csv").read_text())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
