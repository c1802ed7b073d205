"""Configuration-driven orchestration of the full label-lifting pipeline.

Stages: load and cross-validate inputs, flatten proposal stacks into
non-overlapping partitions, label each mask by sampled-pixel correspondence
voting against the database, prune and re-vote labels on the cross-view
consistency graph, back-project to 3D, then score and export.

On-disk layout consumed here (and emitted by the synth command and by
external extractors):

    <views_dir>/
        vocabulary.json
        cloud.tbt                 f32 [N, 3]
        gt_labels.tbt             i32 [N]          (optional)
        view_<k>/
            camera.json
            indices.tbt           i32 [H, W]       pixel -> point index
            depth.tbt             f32 [H, W]
            proposals.tbt         u8  [M, H, W]
            features.tbt          f32 [Hf, Wf, C]
            features.json         {"stride": s, "normalized": true}
    <database_dir>/
        vocabulary.json
        img_<k>/
            features.tbt + features.json
            labels.tbt            i32 [Hf, Wf] or [H, W] (pooled on load)
            coarse_features.tbt + coarse_features.json   (optional)
"""

from __future__ import annotations

import hashlib
import json
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .consistency import aggregate_labels, build_graph, detect_undersegmented
from .core import UNLABELED, PartVocabulary, load_tensor, save_tensor
from .geometry import CameraModel, PixelPointMap, PointCloud, backproject_labels, project_points
from .masks import MaskPartition, assign_mask_label, build_nonoverlapping, proposals_from_stack, sample_pixels
from .matching import (
    DatabaseImage,
    FeatureGrid,
    LabeledDatabase,
    SimilarityCounter,
    best_match_over_db,
    pixel_feature,
)
from .metrics import MODES, miou_category, object_report
from .plyio import default_colormap, export_ply
from .synth import (
    SynthScene,
    majority_label_cells,
    majority_pool_raster,
    make_feature_grid,
    make_view_proposals,
    ring_cameras,
)


class PipelineValidationError(ValueError):
    """Bad configuration or input files; maps to CLI exit code 2."""


@dataclass
class PipelineConfig:
    """Every semantic knob of one pipeline run.

    ``resolution`` may be left unset for runs (it is then inferred from the
    inputs and only cross-checked for consistency); the generator defaults
    it to 800x800.
    """

    views_dir: str = ""
    database_dir: str = ""
    output_dir: str = ""
    k_views: int = 20
    resolution: tuple[int, int] | None = None
    k_samples: int = 20
    cutoff: float = 0.6
    epsilon: int = 0
    tau: int = 5
    coarse_ratio: int = 8
    window: int = 3
    splat_radius: float = 1.0
    seed: int = 0
    metric_mode: str = "standard"

    DEFAULT_RESOLUTION = (800, 800)

    def __post_init__(self):
        if self.k_views < 1:
            raise PipelineValidationError(f"k_views must be >= 1, got {self.k_views}")
        if self.resolution is not None:
            h, w = self.resolution
            if h < 1 or w < 1:
                raise PipelineValidationError(f"resolution must be positive, got {self.resolution}")
            self.resolution = (int(h), int(w))
        if self.k_samples < 1:
            raise PipelineValidationError(f"k_samples must be >= 1, got {self.k_samples}")
        if not 0.0 < self.cutoff <= 1.0:
            raise PipelineValidationError(f"cutoff must be in (0, 1], got {self.cutoff}")
        if self.epsilon < 0:
            raise PipelineValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.tau < 1:
            raise PipelineValidationError(f"tau must be >= 1, got {self.tau}")
        if self.coarse_ratio < 1:
            raise PipelineValidationError(f"coarse_ratio must be >= 1, got {self.coarse_ratio}")
        if self.window < 1 or self.window % 2 == 0:
            raise PipelineValidationError(f"window must be odd and >= 1, got {self.window}")
        if self.splat_radius < 0:
            raise PipelineValidationError(f"splat_radius must be >= 0, got {self.splat_radius}")
        if self.metric_mode not in MODES:
            raise PipelineValidationError(f"metric_mode must be one of {MODES}, got {self.metric_mode!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise PipelineValidationError(f"unknown config keys: {unknown}")
        doc = dict(doc)
        if doc.get("resolution") is not None:
            doc["resolution"] = tuple(doc["resolution"])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise PipelineValidationError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise PipelineValidationError(f"{path}: config must be a JSON object")
        try:
            return cls.from_dict(doc)
        except PipelineValidationError as exc:
            raise PipelineValidationError(f"{path}: {exc}") from exc

    def semantic_dict(self) -> dict:
        return {
            "k_views": self.k_views,
            "resolution": list(self.resolution) if self.resolution else None,
            "k_samples": self.k_samples,
            "cutoff": self.cutoff,
            "epsilon": self.epsilon,
            "tau": self.tau,
            "coarse_ratio": self.coarse_ratio,
            "window": self.window,
            "splat_radius": self.splat_radius,
            "seed": self.seed,
            "metric_mode": self.metric_mode,
        }


@dataclass
class LoadedView:
    name: str
    pmap: PixelPointMap
    proposals: list
    features: FeatureGrid


@dataclass
class PipelineResult:
    labels: np.ndarray
    metrics: dict
    outputs: dict[str, Path]


def _fail(path, field_name, problem) -> PipelineValidationError:
    return PipelineValidationError(f"{path}: field {field_name!r}: {problem}")


def _load_checked(path: Path, field_name: str) -> np.ndarray:
    if not path.exists():
        raise _fail(path, field_name, "file missing")
    try:
        return load_tensor(path)
    except ValueError as exc:
        raise _fail(path, field_name, exc) from exc


def _load_grid(dir_path: Path, stem: str) -> FeatureGrid:
    tb = dir_path / f"{stem}.tbt"
    sidecar = dir_path / f"{stem}.json"
    if not tb.exists():
        raise _fail(tb, "features", "file missing")
    if not sidecar.exists():
        raise _fail(sidecar, "stride", "sidecar missing")
    try:
        data = load_tensor(tb)
    except ValueError as exc:
        raise _fail(tb, "data", exc) from exc
    with open(sidecar) as f:
        meta = json.load(f)
    try:
        return FeatureGrid(data, stride=int(meta["stride"]), normalized=bool(meta.get("normalized", True)))
    except (KeyError, ValueError) as exc:
        raise _fail(sidecar, "stride/normalized", exc) from exc


def _save_grid(grid: FeatureGrid, dir_path: Path, stem: str) -> None:
    save_tensor(grid.data, dir_path / f"{stem}.tbt")
    with open(dir_path / f"{stem}.json", "w") as f:
        json.dump({"normalized": grid.normalized, "stride": grid.stride}, f, sort_keys=True)


def load_views(views_dir) -> tuple[PartVocabulary, PointCloud, list[LoadedView]]:
    root = Path(views_dir)
    vocab_path = root / "vocabulary.json"
    if not vocab_path.exists():
        raise _fail(vocab_path, "parts", "file missing")
    try:
        vocab = PartVocabulary.load(vocab_path)
    except (ValueError, KeyError) as exc:
        raise _fail(vocab_path, "parts", exc) from exc

    cloud_path = root / "cloud.tbt"
    positions = _load_checked(cloud_path, "positions")
    gt_path = root / "gt_labels.tbt"
    gt = _load_checked(gt_path, "gt_labels") if gt_path.exists() else None
    try:
        cloud = PointCloud(positions, gt)
    except ValueError as exc:
        raise _fail(cloud_path, "positions/gt_labels", exc) from exc
    if gt is not None and gt.max(initial=-1) >= len(vocab):
        raise _fail(gt_path, "gt_labels", f"label {int(gt.max())} outside vocabulary of {len(vocab)}")

    view_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("view_"))
    if not view_dirs:
        raise _fail(root, "views", "no view_* directories found")
    views = []
    for vd in view_dirs:
        cam_path = vd / "camera.json"
        if not cam_path.exists():
            raise _fail(cam_path, "camera", "file missing")
        try:
            CameraModel.from_json(cam_path.read_text())
        except (ValueError, KeyError) as exc:
            raise _fail(cam_path, "camera", exc) from exc
        for req in ("proposals.tbt", "features.tbt", "features.json"):
            if not (vd / req).exists():
                raise _fail(vd / req, req.split(".")[0], "file missing")
        indices = _load_checked(vd / "indices.tbt", "indices")
        depth = _load_checked(vd / "depth.tbt", "depth")
        try:
            pmap = PixelPointMap(indices, depth)
        except ValueError as exc:
            raise _fail(vd / "indices.tbt", "indices/depth", exc) from exc
        fg = pmap.indices >= 0
        if fg.any() and int(pmap.indices[fg].max()) >= len(cloud):
            raise _fail(vd / "indices.tbt", "indices", f"point index out of range for {len(cloud)} points")
        stack = _load_checked(vd / "proposals.tbt", "raster")
        if stack.ndim != 3 or stack.shape[1:] != pmap.resolution:
            raise _fail(vd / "proposals.tbt", "raster", f"shape {stack.shape} does not match view resolution {pmap.resolution}")
        grid = _load_grid(vd, "features")
        if not grid.covers(*pmap.resolution):
            raise _fail(vd / "features.tbt", "data", f"grid {grid.grid_shape} at stride {grid.stride} does not cover {pmap.resolution}")
        views.append(LoadedView(vd.name, pmap, proposals_from_stack(stack), grid))
    return vocab, cloud, views


def load_database(database_dir) -> tuple[PartVocabulary, LabeledDatabase]:
    root = Path(database_dir)
    vocab_path = root / "vocabulary.json"
    if not vocab_path.exists():
        raise _fail(vocab_path, "parts", "file missing")
    vocab = PartVocabulary.load(vocab_path)
    img_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("img_"))
    if not img_dirs:
        raise _fail(root, "images", "no img_* directories found")
    images = []
    for i, d in enumerate(img_dirs):
        grid = _load_grid(d, "features")
        labels = _load_checked(d / "labels.tbt", "labels")
        lab_path = d / "labels.tbt"
        if labels.shape != grid.grid_shape:
            if grid.covers(*labels.shape):
                labels = majority_pool_raster(labels, grid.stride)
            else:
                raise _fail(lab_path, "labels", f"raster {labels.shape} matches neither grid {grid.grid_shape} nor its pixel coverage")
        if labels.max(initial=-1) >= len(vocab):
            raise _fail(lab_path, "labels", f"label {int(labels.max())} outside vocabulary of {len(vocab)}")
        coarse = None
        if (d / "coarse_features.tbt").exists():
            coarse = _load_grid(d, "coarse_features")
        try:
            images.append(DatabaseImage(i, grid, labels, coarse))
        except ValueError as exc:
            raise _fail(d, "labels", exc) from exc
    return vocab, LabeledDatabase(images)


def _input_digest(config: PipelineConfig, search: str) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config.semantic_dict(), sort_keys=True).encode())
    h.update(search.encode())
    for root in (config.views_dir, config.database_dir):
        for p in sorted(Path(root).rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(root)).encode())
                h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()[:32]


def _label_view_masks(
    view: LoadedView,
    partition: MaskPartition,
    db: LabeledDatabase,
    config: PipelineConfig,
    view_index: int,
    search: str,
) -> tuple[list[int], list[float], int]:
    """Sample, match, and vote every mask of one view. Returns per-mask
    labels, confidences, and the similarity-evaluation count."""
    counter = SimilarityCounter()
    labels: list[int] = []
    confs: list[float] = []
    for m in range(partition.mask_count):
        seed = np.random.SeedSequence([config.seed, 7, view_index, m])
        pixels = sample_pixels(partition, m, config.k_samples, seed)
        matches = []
        for row, col in pixels:
            vec, zero = pixel_feature(view.features, (int(row), int(col)))
            if zero:
                continue
            matches.append(
                best_match_over_db(
                    vec, db, window=config.window, counter=counter,
                    exhaustive=(search == "brute"),
                )
            )
        if matches:
            lab, conf = assign_mask_label(matches, config.cutoff)
        else:
            lab, conf = UNLABELED, 0.0
        labels.append(lab)
        confs.append(conf)
    return labels, confs, counter.total


def run_pipeline(
    config: PipelineConfig,
    search: str = "coarse",
    threads: int = 1,
    cache_dir=None,
    dump_graph: bool = False,
) -> PipelineResult:
    """Execute every stage and write labels, metrics, and a colored PLY.

    ``search`` selects coarse-to-fine ("coarse") or exhaustive ("brute")
    database matching; outputs are deterministic for a fixed config + seed
    and independent of ``threads``. Partial outputs are removed on failure.
    """
    if search not in ("coarse", "brute"):
        raise PipelineValidationError(f"search must be 'coarse' or 'brute', got {search!r}")
    if threads < 1:
        raise PipelineValidationError(f"threads must be >= 1, got {threads}")
    for name in ("views_dir", "database_dir", "output_dir"):
        if not getattr(config, name):
            raise PipelineValidationError(f"config field {name!r} is required to run")

    timings: dict[str, float] = {}
    t0 = time.monotonic()
    vocab, cloud, views = load_views(config.views_dir)
    db_vocab, db = load_database(config.database_dir)
    if db_vocab.names != vocab.names:
        raise PipelineValidationError(
            f"{Path(config.database_dir) / 'vocabulary.json'}: field 'parts': "
            f"database vocabulary {db_vocab.names} does not match query vocabulary {vocab.names}"
        )
    resolutions = {v.pmap.resolution for v in views}
    if len(resolutions) != 1:
        raise PipelineValidationError(f"views disagree on resolution: {sorted(resolutions)}")
    if config.resolution is not None and config.resolution not in resolutions:
        raise PipelineValidationError(
            f"config resolution {config.resolution} does not match inputs {sorted(resolutions)}"
        )
    if search == "coarse":
        db = db.with_coarse(config.coarse_ratio)
    timings["load"] = time.monotonic() - t0

    digest = _input_digest(config, search) if cache_dir is not None else None

    t0 = time.monotonic()
    partitions = [
        build_nonoverlapping(v.proposals, shape=v.pmap.resolution) for v in views
    ]
    timings["partition"] = time.monotonic() - t0

    t0 = time.monotonic()
    sim_evals = 0
    mask_labels: list[list[int]] = [None] * len(views)
    mask_confs: list[list[float]] = [None] * len(views)

    def work(vi: int):
        if cache_dir is not None:
            hit = Path(cache_dir) / digest / f"{views[vi].name}.json"
            if hit.exists():
                with open(hit) as f:
                    doc = json.load(f)
                return doc["labels"], doc["confidences"], 0
        out = _label_view_masks(views[vi], partitions[vi], db, config, vi, search)
        if cache_dir is not None:
            hit = Path(cache_dir) / digest / f"{views[vi].name}.json"
            hit.parent.mkdir(parents=True, exist_ok=True)
            with open(hit, "w") as f:
                json.dump({"labels": out[0], "confidences": out[1]}, f, sort_keys=True)
        return out

    if threads == 1:
        results = [work(vi) for vi in range(len(views))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(views))))
    for vi, (labs, confs, evals) in enumerate(results):
        mask_labels[vi] = labs
        mask_confs[vi] = confs
        sim_evals += evals
    timings["match"] = time.monotonic() - t0

    t0 = time.monotonic()
    graph = build_graph(
        [
            (partitions[vi], views[vi].pmap, mask_labels[vi], mask_confs[vi])
            for vi in range(len(views))
        ],
        tau=config.tau,
    )
    discards = detect_undersegmented(graph, config.epsilon)
    final_mask_labels = aggregate_labels(graph, discards, config.cutoff)
    timings["consistency"] = time.monotonic() - t0

    t0 = time.monotonic()
    vertex_of = {
        (v.view, v.mask): i for i, v in enumerate(graph.vertices)
    }
    rasters = []
    for vi, partition in enumerate(partitions):
        lut = np.full(max(partition.mask_count, 1), UNLABELED, dtype=np.int32)
        for m in range(partition.mask_count):
            lut[m] = final_mask_labels[vertex_of[(vi, m)]]
        raster = np.where(partition.id_map >= 0, lut[np.clip(partition.id_map, 0, None)], UNLABELED)
        rasters.append(raster.astype(np.int32))
    labels3d = backproject_labels(
        [(views[vi].pmap, rasters[vi]) for vi in range(len(views))],
        n_points=len(cloud),
        cutoff=config.cutoff,
    )
    timings["backproject"] = time.monotonic() - t0

    metrics: dict = {
        "search_mode": search,
        "config": config.semantic_dict(),
        "counters": {
            "similarity_evals": int(sim_evals),
            "views": len(views),
            "masks_total": int(sum(p.mask_count for p in partitions)),
            "masks_abstained": int(sum(1 for labs in mask_labels for l in labs if l == UNLABELED)),
            "graph_edges": len(graph.overlap),
            "graph_vertices": graph.n_vertices(),
            "discarded_masks": len(discards),
            "points": len(cloud),
            "points_labeled": int(np.count_nonzero(labels3d >= 0)),
        },
    }
    if cloud.gt_labels is not None:
        parts = vocab.labels()
        miou = {}
        per_part = {}
        for mode in MODES:
            report = miou_category([object_report(labels3d, cloud.gt_labels, parts, mode)], parts, mode)
            miou[mode] = report.category_miou
            per_part[mode] = report.to_dict()["per_part"]
        metrics["miou"] = miou
        metrics["per_part"] = per_part
        metrics["metric_mode"] = config.metric_mode
        metrics["headline_miou"] = miou[config.metric_mode]

    out_root = Path(config.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    outputs: dict[str, Path] = {}
    try:
        labels_path = out_root / "labels.tbt"
        save_tensor(labels3d.astype(np.int32), labels_path)
        written.append(labels_path)
        outputs["labels"] = labels_path

        ply_path = out_root / "labeled.ply"
        ply_path.write_text(export_ply(cloud.positions, labels3d, default_colormap(len(vocab))))
        written.append(ply_path)
        outputs["ply"] = ply_path

        if dump_graph:
            graph_path = out_root / "graph.json"
            graph_path.write_text(
                json.dumps(graph.to_debug_dict(discards, final_mask_labels), indent=2, sort_keys=True)
            )
            written.append(graph_path)
            outputs["graph"] = graph_path
            part_dir = out_root / "partitions"
            part_dir.mkdir(exist_ok=True)
            for vi, partition in enumerate(partitions):
                p = part_dir / f"{views[vi].name}.tbt"
                save_tensor(partition.id_map, p)
                written.append(p)
            outputs["partitions"] = part_dir

        metrics["timings"] = {k: round(v, 6) for k, v in timings.items()}
        metrics_path = out_root / "metrics.json"
        metrics_path.write_text(json.dumps(metrics, indent=2, sort_keys=True))
        written.append(metrics_path)
        outputs["metrics"] = metrics_path
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return PipelineResult(labels=labels3d, metrics=metrics, outputs=outputs)


class DatabaseImageRejected(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def prepare_database_image(
    image: np.ndarray,
    mask: np.ndarray,
    labels: np.ndarray,
    bbox: tuple[int, int, int, int] | None = None,
    pad: int = 16,
    min_mask_frac: float = 0.01,
):
    """Mask out the background and square-crop one annotated database image.

    ``bbox`` is (r0, c0, r1, c1), end-exclusive; by default the mask's own
    extent. The crop window is a square around the bbox center, padded by
    ``pad`` pixels per side and truncated at image borders. The label raster
    is cropped identically, with off-mask pixels forced to -1. Objects whose
    mask covers less than ``min_mask_frac`` of the image are rejected.
    """
    image = np.asarray(image)
    mask = np.asarray(mask).astype(bool)
    labels = np.asarray(labels)
    h, w = mask.shape
    if image.shape[:2] != (h, w) or labels.shape != (h, w):
        raise ValueError("image, mask, and labels must share one resolution")
    if mask.sum() < min_mask_frac * h * w:
        raise DatabaseImageRejected("too small")
    if bbox is None:
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        bbox = (int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)
    r0, c0, r1, c1 = bbox
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ValueError(f"bbox {bbox} outside image {(h, w)}")

    side = max(r1 - r0, c1 - c0) + 2 * pad
    rs_ideal = (r0 + r1 - side) // 2
    cs_ideal = (c0 + c1 - side) // 2
    rs, re = max(rs_ideal, 0), min(rs_ideal + side, h)
    cs, ce = max(cs_ideal, 0), min(cs_ideal + side, w)

    masked = image.copy()
    masked[~mask] = 0
    labels_out = np.where(mask, labels, UNLABELED).astype(np.int32)
    return masked[rs:re, cs:ce], labels_out[rs:re, cs:ce], (rs, cs, re, ce)


def write_scene_files(
    scene: SynthScene,
    out_root,
    stride: int = 2,
    splat_radius: float = 1.0,
    db_views: int = 8,
) -> tuple[Path, Path]:
    """Emit a full query + database directory pair for a synthetic scene.

    The database is rendered from its own camera ring (rotated relative to
    the query ring) so label transfer genuinely crosses viewpoints. Returns
    (views_dir, database_dir).
    """
    root = Path(out_root)
    if root.exists():
        shutil.rmtree(root)
    views_root = root / "query"
    db_root = root / "database"
    views_root.mkdir(parents=True)
    db_root.mkdir(parents=True)

    vocab = PartVocabulary(tuple(f"part_{i}" for i in range(scene.part_embeddings.shape[0])))
    vocab.save(views_root / "vocabulary.json")
    vocab.save(db_root / "vocabulary.json")
    save_tensor(scene.cloud.positions.astype(np.float32), views_root / "cloud.tbt")
    save_tensor(scene.cloud.gt_labels.astype(np.int32), views_root / "gt_labels.tbt")

    gt = scene.cloud.gt_labels
    for vi, cam in enumerate(scene.cameras):
        vd = views_root / f"view_{vi:03d}"
        vd.mkdir()
        pmap = project_points(scene.cloud, cam, splat_radius)
        seed = int(np.random.SeedSequence([scene.seed, 1, vi]).generate_state(1)[0])
        grid = make_feature_grid(pmap, gt, scene.part_embeddings, scene.noise_sigma, stride, seed)
        (vd / "camera.json").write_text(cam.to_json())
        save_tensor(pmap.indices, vd / "indices.tbt")
        save_tensor(pmap.depth, vd / "depth.tbt")
        save_tensor(make_view_proposals(pmap, gt), vd / "proposals.tbt")
        _save_grid(grid, vd, "features")

    centroid = scene.cloud.positions.mean(axis=0)
    radius = float(np.linalg.norm(scene.cloud.positions - centroid, axis=1).max())
    res = (scene.cameras[0].height, scene.cameras[0].width)
    db_cams = ring_cameras(centroid, radius, db_views, res, phase=0.37)
    for di, cam in enumerate(db_cams):
        dd = db_root / f"img_{di:03d}"
        dd.mkdir()
        pmap = project_points(scene.cloud, cam, splat_radius)
        seed = int(np.random.SeedSequence([scene.seed, 2, di]).generate_state(1)[0])
        grid = make_feature_grid(pmap, gt, scene.part_embeddings, scene.noise_sigma, stride, seed)
        _save_grid(grid, dd, "features")
        save_tensor(majority_label_cells(pmap, gt, stride), dd / "labels.tbt")
    return views_root, db_root
