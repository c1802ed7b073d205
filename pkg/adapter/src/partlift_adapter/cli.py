"""CLI: batch-extract masks and features for a directory of images."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExtractionConfig
from .extract import extract_to_dir

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="partlift-adapter")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="masks + features for every image in a directory")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON ExtractionConfig file")
    p.add_argument("--cache", help="content-hash cache directory")
    args = ap.parse_args(argv)

    try:
        config = ExtractionConfig.from_file(args.config) if args.config else ExtractionConfig()
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    images = sorted(
        p for p in Path(args.images).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        print(f"error: no images under {args.images}", file=sys.stderr)
        return 2

    from PIL import Image

    written = []
    for i, path in enumerate(images):
        rgb = np.asarray(Image.open(path).convert("RGB"))
        out_dir = Path(args.out) / f"img_{i:03d}"
        try:
            extract_to_dir(rgb, out_dir, config, cache_dir=args.cache)
        except RuntimeError as exc:
            print(f"error: {path.name}: {exc}", file=sys.stderr)
            return 1
        written.append({"source": path.name, "out": str(out_dir)})
    print(json.dumps({"extracted": written}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
