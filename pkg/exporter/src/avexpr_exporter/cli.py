"""avexpr-export: one-shot feature export driven by a manifest.

Exit codes mirror the consumer CLI: 0 success, 1 data error with a single
"error: <Kind>: <message>" line on stderr, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .errors import ExporterError
from .export import ExportJob, export_all


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="avexpr-export",
        description="Run pretrained encoders over face crops and audio tracks, writing AFF1/AFA1 files",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--manifest", required=True, help="JSON-lines manifest of videos")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vision", default="toy", help="visual encoder name (toy, dinov2)")
    p.add_argument("--audio", default="toy", help="audio encoder name (toy, wav2vec2)")
    p.add_argument("--device", default="cpu")
    p.add_argument("--quiet", action="store_true", help="suppress per-file log lines")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    job = ExportJob(args.manifest, args.out_dir, args.vision, args.audio, args.device)
    try:
        written = export_all(job)
    except (ExporterError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} files under {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
