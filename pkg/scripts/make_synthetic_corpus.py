#!/usr/bin/env python3
"""Generate a procedural texture corpus for pipeline demos and benchmarks.

Each scan gets a distinct texture family, so patch retrieval has a
meaningful ground truth without any real slide data. The output layout
(images/, queries/, truth.csv, corpus.json) feeds the patchsieve CLI
directly; see the README for a worked end-to-end example.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from patchsieve.synthetic import (
    SyntheticCorpusConfig,
    generate_corpus,
    recommended_tiling_config,
)


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, metavar="DIR", help="output directory")
    parser.add_argument("--scans", type=int, default=6)
    parser.add_argument("--grid", type=int, nargs=2, default=(23, 23),
                        metavar=("ROWS", "COLS"), help="texture cells per scan")
    parser.add_argument("--query-grid", type=int, nargs=2, default=(8, 8),
                        metavar=("ROWS", "COLS"), help="query cells per scan")
    parser.add_argument("--patch-size", type=int, default=32)
    parser.add_argument("--blend-fraction", type=float, default=0.25,
                        help="fraction of cells mixing two textures")
    parser.add_argument("--white-cells", type=int, default=29,
                        help="background cells per scan (dropped by tiling)")
    parser.add_argument("--seed", type=int, default=0)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    cfg = SyntheticCorpusConfig(
        scans=args.scans,
        grid=tuple(args.grid),
        query_grid=tuple(args.query_grid),
        patch_size=args.patch_size,
        blend_fraction=args.blend_fraction,
        white_cells=args.white_cells,
        seed=args.seed,
    )
    summary = generate_corpus(cfg, args.out)
    tiling = recommended_tiling_config(cfg)
    print(json.dumps(summary["scans"], indent=2))
    print(f"wrote {cfg.scans} scans under {args.out}")
    print(
        "tile with: patchsieve tile --images {0}/images --out TILES "
        "--patch-size {1} --stride {2} --downsample-to {3}".format(
            args.out, tiling.patch_size, tiling.stride, tiling.downsample_to
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
