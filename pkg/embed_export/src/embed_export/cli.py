"""CLI: embed-export --manifest corpus.jsonl --out embeddings/ --encoder ID

Exit codes: 0 success, 1 usage error, 2 data or encoder error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .encoders import EncoderLoadError, available_encoders
from .export import ExportError, ExportJob, export_embeddings

log = logging.getLogger("embed_export")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="embed-export",
        description="Run a music encoder over corpus clips and write one "
                    "mean-pooled per-layer embedding file (.lstk) per clip.")
    parser.add_argument("--manifest", required=True,
                        help="corpus manifest JSONL (id + path per line)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--encoder", required=True,
                        help=f"encoder id ({', '.join(available_encoders())}, "
                             "or any registered backend)")
    parser.add_argument("--sample-rate", type=int, default=None,
                        help="override the encoder's input sample rate")
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        job = ExportJob(manifest=args.manifest, encoder=args.encoder,
                        out_dir=args.out, sample_rate=args.sample_rate)
        export_embeddings(job)
    except (ExportError, EncoderLoadError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
