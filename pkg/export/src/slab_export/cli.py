"""Command line wrapper around the exporter.

Exit codes: 0 success, 2 bad configuration or unusable model, 3 file I/O.
"""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportError, ExportSpec, export_model


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slab-export",
        description="Extract linear-layer weights and calibration activations"
        " from a saved torch module into a manifest plus tensor container.",
    )
    parser.add_argument("--checkpoint", required=True, help="saved module (.pt)")
    parser.add_argument("--calib", required=True, help="calibration batch (.npy or .pt)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--include", action="append", default=[], metavar="PAT",
                        help="glob of layer names to keep (repeatable; overrides the"
                        " default embedding and head excludes)")
    parser.add_argument("--exclude", action="append", default=[], metavar="PAT",
                        help="glob of layer names to drop (repeatable; always wins)")
    parser.add_argument("--sequences", type=int, default=128,
                        help="sequences sampled from a 3-D calibration array")
    parser.add_argument("--seq-len", type=int, default=2048,
                        help="positions kept per sampled sequence")
    parser.add_argument("--dtype", choices=("f16", "f32"), default="f16",
                        help="storage precision for weights and activations")
    parser.add_argument("--seed", type=int, default=0, help="sampling seed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(
            checkpoint=args.checkpoint,
            calib=args.calib,
            out_dir=args.out,
            include=args.include,
            exclude=args.exclude,
            sequences=args.sequences,
            seq_len=args.seq_len,
            dtype=args.dtype,
            seed=args.seed,
        )
        summary = export_model(spec)
    except ExportError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 3
    for name in summary["layers"]:
        print(f"exported {name} ({summary['rows'][name]} calibration rows)")
    print(f"wrote {summary['manifest']} and {summary['tensors']} ({summary['bytes']} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
