"""Command-line entry points.

Subcommands: run (full pipeline), synth (generate synthetic fixtures),
eval (metrics only), export-ply, prepare-db. Exit codes: 0 success,
2 validation failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import PartVocabulary, load_tensor, save_tensor
from .metrics import MODES, miou_category, object_report
from .pipeline import (
    DatabaseImageRejected,
    PipelineConfig,
    PipelineValidationError,
    prepare_database_image,
    run_pipeline,
    write_scene_files,
)
from .plyio import default_colormap, export_ply
from .synth import make_scene, spheres_in_row_recipe, stacked_boxes_recipe

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    p.add_argument("--views", dest="views_dir", help="query views directory")
    p.add_argument("--database", dest="database_dir", help="database directory")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--k-views", dest="k_views", type=int)
    p.add_argument("--resolution", help="HxW, e.g. 800x800")
    p.add_argument("--k-samples", dest="k_samples", type=int)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--epsilon", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--coarse-ratio", dest="coarse_ratio", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--splat-radius", dest="splat_radius", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--metric-mode", dest="metric_mode", choices=MODES)


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise PipelineValidationError(f"resolution must look like 800x800, got {text!r}")


def _config_from_args(args) -> PipelineConfig:
    doc: dict = {}
    if args.config:
        doc = PipelineConfig.from_file(args.config).__dict__.copy()
        doc.pop("DEFAULT_RESOLUTION", None)
    for name in (
        "views_dir", "database_dir", "output_dir", "k_views", "k_samples",
        "cutoff", "epsilon", "tau", "coarse_ratio", "window",
        "splat_radius", "seed", "metric_mode",
    ):
        val = getattr(args, name, None)
        if val is not None:
            doc[name] = val
    if getattr(args, "resolution", None) is not None:
        doc["resolution"] = _parse_resolution(args.resolution)
    return PipelineConfig.from_dict(doc)


def cmd_run(args) -> int:
    config = _config_from_args(args)
    result = run_pipeline(
        config,
        search=args.search,
        threads=args.threads,
        cache_dir=args.cache,
        dump_graph=args.dump_graph,
    )
    summary = {
        "outputs": {k: str(v) for k, v in result.outputs.items()},
        "counters": result.metrics["counters"],
    }
    if "miou" in result.metrics:
        summary["miou"] = result.metrics["miou"]
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    recipe_fn = {"spheres": spheres_in_row_recipe, "boxes": stacked_boxes_recipe}[args.recipe]
    resolution = _parse_resolution(args.resolution)
    scene = make_scene(
        recipe=recipe_fn(args.parts),
        parts=args.parts,
        k_views=args.k_views,
        seed=args.seed,
        n_points=args.n_points,
        channels=args.channels,
        resolution=resolution,
        noise_sigma=args.sigma,
    )
    views_dir, db_dir = write_scene_files(
        scene, args.out, stride=args.stride,
        splat_radius=args.splat_radius, db_views=args.db_views,
    )
    print(json.dumps({"views_dir": str(views_dir), "database_dir": str(db_dir)}, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = load_tensor(args.pred)
    gt = load_tensor(args.gt)
    vocab = PartVocabulary.load(args.vocab)
    report = miou_category(
        [object_report(pred, gt, vocab.labels(), args.mode)], vocab.labels(), args.mode
    )
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_export_ply(args) -> int:
    positions = load_tensor(args.cloud)
    labels = load_tensor(args.labels)
    n_colors = int(labels.max()) + 1 if labels.size and labels.max() >= 0 else 1
    Path(args.out).write_text(export_ply(positions, labels, default_colormap(n_colors)))
    print(args.out)
    return EXIT_OK


def cmd_prepare_db(args) -> int:
    from PIL import Image

    image = np.asarray(Image.open(args.image).convert("RGB"))
    mask = np.asarray(Image.open(args.mask).convert("L")) > 0
    labels = load_tensor(args.labels)
    bbox = tuple(int(v) for v in args.bbox.split(",")) if args.bbox else None
    try:
        crop, lab_crop, window = prepare_database_image(
            image, mask, labels, bbox=bbox, pad=args.pad, min_mask_frac=args.min_mask_frac
        )
    except DatabaseImageRejected as exc:
        print(f"rejected: {exc.reason}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(crop).save(out / "image.png")
    save_tensor(lab_crop.astype(np.int32), out / "labels.tbt")
    print(json.dumps({"out": str(out), "window": list(window)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partlift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline on prepared inputs")
    _add_config_flags(p)
    p.add_argument("--search", choices=("coarse", "brute"), default="coarse")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--cache", help="cache directory for match results")
    p.add_argument("--dump-graph", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic scene fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--parts", type=int, default=3)
    p.add_argument("--k-views", dest="k_views", type=int, default=20)
    p.add_argument("--db-views", dest="db_views", type=int, default=8)
    p.add_argument("--resolution", default="192x192")
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--n-points", dest="n_points", type=int, default=4000)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--splat-radius", dest="splat_radius", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--recipe", choices=("spheres", "boxes"), default="spheres")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--mode", choices=MODES, default="standard")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-ply", help="write a colored point cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_ply)

    p = sub.add_parser("prepare-db", help="mask, crop, and pad one database image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--labels", required=True, help="per-pixel label raster (.tbt)")
    p.add_argument("--out", required=True)
    p.add_argument("--bbox", help="r0,c0,r1,c1 (end-exclusive); default: mask extent")
    p.add_argument("--pad", type=int, default=16)
    p.add_argument("--min-mask-frac", dest="min_mask_frac", type=float, default=0.01)
    p.set_defaults(fn=cmd_prepare_db)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (PipelineValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
