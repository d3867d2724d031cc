"""Command-line front end for the hidden-state exporter."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExportConfig, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Export per-token language-model hidden states to .emb "
        "bundles plus a pairing manifest.",
    )
    parser.add_argument("--corpus", required=True, help="original caption JSONL")
    parser.add_argument("--augmented",
                        help="augmented caption JSONL; omitted = self-paired manifest")
    parser.add_argument("--model", default="roberta-base",
                        help="model name or local path")
    parser.add_argument("--layer", type=int, default=-1,
                        help="hidden-states index to export (-1 = last layer)")
    parser.add_argument("--max-length", type=int, default=64)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--manifest", help="manifest JSONL path "
                        "(default: <out-dir>/manifest.jsonl)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    cfg = ExportConfig(
        model=args.model,
        layer=args.layer,
        max_length=args.max_length,
        out_dir=Path(args.out_dir),
        batch_size=args.batch_size,
    )
    manifest = args.manifest or str(Path(args.out_dir) / "manifest.jsonl")
    try:
        entries = export(args.corpus, cfg, augmented=args.augmented, manifest=manifest)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {len(entries)} pairs to {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
