"""Command line for the probability exporter.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exporter import SUPPORTED_MODELS, ExportError, ExportSpec, export


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise ExportError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="prob-export", description=__doc__)
    parser.add_argument("--model", required=True, choices=SUPPORTED_MODELS,
                        help="pretrained architecture")
    parser.add_argument("--input-dir", required=True,
                        help="image directory (<class_index>/<image> layout, or flat with --labels)")
    parser.add_argument("--labels", help="sidecar CSV (filename,label) instead of the directory layout")
    parser.add_argument("--mapping", help="fine,coarse mapping CSV for superclass aggregation")
    parser.add_argument("--out", required=True, help="output probability-table CSV")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        spec = ExportSpec(
            model_name=args.model,
            input_dir=Path(args.input_dir),
            output_path=Path(args.out),
            mapping_file=Path(args.mapping) if args.mapping else None,
            labels_file=Path(args.labels) if args.labels else None,
            batch_size=args.batch_size,
        )
        if not spec.input_dir.is_dir():
            raise ExportError(f"input directory not found: {spec.input_dir}")
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        out = export(spec)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}", file=sys.stderr)
    return 0


def console_main() -> None:
    sys.exit(main())
