"""Command line for the deep feature exporter."""

import argparse
import sys

from . import __version__
from .exporter import ExportError, ExportJob, export_features


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepexport", description=__doc__.splitlines()[0]
    )
    parser.add_argument("--version", action="version", version=f"deepexport {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    export = sub.add_parser("export", help="export patch features to a feature file")
    export.add_argument("--manifest", required=True, metavar="FILE",
                        help="tiles manifest (patches resolve relative to it)")
    export.add_argument("--out", required=True, metavar="FILE",
                        help="output feature file")
    export.add_argument("--batch", type=int, default=32, metavar="N",
                        help="inference batch size (default 32)")
    export.add_argument("--weights", default="pretrained", metavar="SPEC",
                        help="'pretrained', 'random', or a state-dict path "
                             "(default pretrained; needs network access)")
    export.add_argument("--device", default="cpu", help="torch device (default cpu)")
    export.add_argument("--seed", type=int, default=0,
                        help="initialization seed for --weights random")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(sys.argv[1:] if argv is None else list(argv))
    if args.command != "export":
        parser.print_usage(sys.stderr)
        return 1
    try:
        job = ExportJob(
            manifest=args.manifest,
            out=args.out,
            batch_size=args.batch,
            weights=args.weights,
            device=args.device,
            seed=args.seed,
        )
        ids, matrix = export_features(job)
    except ExportError as exc:
        print(f"deepexport: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"deepexport: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(ids)} deep4096 descriptors (dim {matrix.shape[1]}) -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
