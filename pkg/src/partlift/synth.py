"""Deterministic synthetic scenes for exercising the pipeline end to end.

A scene is a labeled point cloud sampled from simple part solids, a ring of
cameras on a viewing sphere, and one unit descriptor per part. Feature grids
derived from a rendered view place each part's descriptor (plus seeded
Gaussian noise scaled by sigma) in every cell the part dominates, so with
sigma 0 correspondence matching is exact by construction. All randomness
flows from explicit seeds; the same seed reproduces a scene bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import UNLABELED
from .geometry import CameraModel, PixelPointMap, PointCloud, look_at_extrinsic
from .matching import FeatureGrid


@dataclass(frozen=True)
class PartSolid:
    """One axis-aligned part primitive: a box (center+size) or a sphere."""

    kind: str  # "box" | "sphere"
    center: tuple[float, float, float]
    size: tuple[float, float, float] = (1.0, 1.0, 1.0)  # box edge lengths
    radius: float = 0.5

    def __post_init__(self):
        if self.kind not in ("box", "sphere"):
            raise ValueError(f"unknown solid kind {self.kind!r}")
        if self.kind == "box" and min(self.size) <= 0:
            raise ValueError(f"degenerate box size {self.size}")
        if self.kind == "sphere" and self.radius <= 0:
            raise ValueError(f"degenerate sphere radius {self.radius}")

    def surface_area(self) -> float:
        if self.kind == "sphere":
            return 4.0 * math.pi * self.radius**2
        sx, sy, sz = self.size
        return 2.0 * (sx * sy + sy * sz + sx * sz)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        c = np.asarray(self.center)
        if self.kind == "sphere":
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return c + self.radius * v
        sx, sy, sz = self.size
        face_areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
        face = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        uv = rng.uniform(-0.5, 0.5, size=(n, 2))
        pts = np.empty((n, 3))
        half = np.array([sx, sy, sz]) / 2.0
        for f in range(6):
            sel = face == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            others = [a for a in range(3) if a != axis]
            pts[sel, axis] = sign * half[axis]
            pts[sel, others[0]] = uv[sel, 0] * (2 * half[others[0]])
            pts[sel, others[1]] = uv[sel, 1] * (2 * half[others[1]])
        return c + pts


def spheres_in_row_recipe(parts: int) -> list[PartSolid]:
    """Disjoint spheres along x; convex parts keep every point visible from
    some ring camera, which end-to-end exactness relies on."""
    solids = []
    x = 0.0
    for i in range(parts):
        r = 0.45 + 0.1 * (i % 3)
        solids.append(PartSolid("sphere", (x, 0.0, 0.0), radius=r))
        x += 2.4 * r
    return solids


def stacked_boxes_recipe(parts: int) -> list[PartSolid]:
    solids = []
    z = 0.0
    for i in range(parts):
        sz = (1.2 - 0.2 * (i % 3), 1.0, 0.6 + 0.15 * (i % 2))
        solids.append(PartSolid("box", (0.0, 0.0, z + sz[2] / 2), size=sz))
        z += sz[2]
    return solids


@dataclass(frozen=True)
class SynthScene:
    cloud: PointCloud
    cameras: list[CameraModel]
    part_embeddings: np.ndarray  # (P, C) unit rows, pairwise cosine <= 0.5
    noise_sigma: float
    seed: int


def _part_embeddings(parts: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    """Random unit vectors rejected until pairwise cosine stays under 0.5."""
    for _ in range(10_000):
        e = rng.normal(size=(parts, channels))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        gram = e @ e.T
        np.fill_diagonal(gram, -1.0)
        if parts == 1 or gram.max() <= 0.5:
            return e
    raise RuntimeError(
        f"could not place {parts} embeddings in {channels} dims under the cosine cap"
    )


def _fibonacci_directions(k: int, phase: float = 0.0) -> np.ndarray:
    i = np.arange(k, dtype=np.float64)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    z = 1.0 - (2.0 * i + 1.0) / k
    theta = 2.0 * math.pi * (i / golden + phase)
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def ring_cameras(
    target, scene_radius: float, k: int, resolution: tuple[int, int],
    distance_factor: float = 3.0, fill: float = 0.42, phase: float = 0.0,
) -> list[CameraModel]:
    h, w = resolution
    dist = distance_factor * scene_radius
    focal = fill * min(h, w) * dist / scene_radius
    cams = []
    for d in _fibonacci_directions(k, phase):
        eye = np.asarray(target) + dist * d
        cams.append(
            CameraModel(
                fx=focal, fy=focal,
                cx=(w - 1) / 2.0, cy=(h - 1) / 2.0,
                width=w, height=h,
                world_to_cam=look_at_extrinsic(eye, target),
            )
        )
    return cams


def _allocate_counts(areas: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to areas."""
    quota = areas / areas.sum() * total
    counts = np.floor(quota).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[:short]] += 1
    if (counts == 0).any():
        # every part contributes at least one point
        for i in np.flatnonzero(counts == 0):
            counts[i] += 1
            counts[np.argmax(counts)] -= 1
    return counts


def make_scene(
    recipe: list[PartSolid] | None = None,
    parts: int = 3,
    k_views: int = 20,
    seed: int = 0,
    n_points: int = 4000,
    channels: int = 32,
    resolution: tuple[int, int] = (192, 192),
    noise_sigma: float = 0.0,
) -> SynthScene:
    """Sample a labeled cloud from the recipe and place k cameras around it."""
    if parts < 1 or k_views < 1:
        raise ValueError("need at least one part and one view")
    if recipe is None:
        recipe = spheres_in_row_recipe(parts)
    if len(recipe) != parts:
        raise ValueError(f"recipe holds {len(recipe)} solids for {parts} parts")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))

    areas = np.array([s.surface_area() for s in recipe])
    counts = _allocate_counts(areas, n_points)
    positions = []
    labels = []
    for part, (solid, cnt) in enumerate(zip(recipe, counts)):
        positions.append(solid.sample_surface(int(cnt), rng))
        labels.append(np.full(int(cnt), part, dtype=np.int32))
    cloud = PointCloud(np.concatenate(positions), np.concatenate(labels))

    centroid = cloud.positions.mean(axis=0)
    radius = float(np.linalg.norm(cloud.positions - centroid, axis=1).max())
    cameras = ring_cameras(centroid, radius, k_views, resolution)
    embeddings = _part_embeddings(parts, channels, rng)
    return SynthScene(cloud, cameras, embeddings, noise_sigma, seed)


def majority_pool_raster(labels_img: np.ndarray, stride: int) -> np.ndarray:
    """Pool a per-pixel label raster to grid cells by majority vote.

    Ties break to the lowest label id; cells containing only -1 stay -1.
    """
    labels_img = np.asarray(labels_img, dtype=np.int64)
    h, w = labels_img.shape
    hf = math.ceil(h / stride)
    wf = math.ceil(w / stride)
    out = np.full((hf, wf), UNLABELED, dtype=np.int32)
    n_parts = int(labels_img.max()) + 1 if labels_img.size else 0
    lab = labels_img.ravel()
    keep = lab >= 0
    if n_parts > 0 and keep.any():
        cell_r = np.repeat(np.arange(hf), stride)[:h]
        cell_c = np.repeat(np.arange(wf), stride)[:w]
        cell_of_pix = cell_r[:, None] * wf + cell_c[None, :]
        combo = cell_of_pix.ravel()[keep] * n_parts + lab[keep]
        hist = np.bincount(combo, minlength=hf * wf * n_parts).reshape(hf * wf, n_parts)
        any_fg = hist.sum(axis=1) > 0
        out.ravel()[any_fg] = hist[any_fg].argmax(axis=1)  # argmax ties -> lowest id
    return out


def majority_label_cells(
    pmap: PixelPointMap, gt_labels: np.ndarray, stride: int
) -> np.ndarray:
    """Per grid cell, the most common part label among covered foreground
    pixels (ties to the lowest id); -1 where a cell sees only background."""
    pix_labels = np.full(pmap.resolution, UNLABELED, dtype=np.int64)
    fg = pmap.indices >= 0
    pix_labels[fg] = gt_labels[pmap.indices[fg]]
    return majority_pool_raster(pix_labels, stride)


def make_feature_grid(
    pmap: PixelPointMap,
    gt_labels: np.ndarray,
    embeddings: np.ndarray,
    sigma: float,
    stride: int,
    seed: int,
) -> FeatureGrid:
    """Part-keyed descriptors with seed-stable additive noise.

    ``sigma`` is the expected noise-to-signal norm ratio: the per-cell
    Gaussian perturbation has expected length ~sigma against unit-length
    embeddings. The noise field is drawn once from the seed and scaled by
    sigma, so sweeping sigma under one seed perturbs every cell along a
    fixed direction instead of resampling it.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    cells = majority_label_cells(pmap, gt_labels, stride)
    hf, wf = cells.shape
    c = embeddings.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFEA7]))
    noise = rng.normal(size=(hf, wf, c)) / math.sqrt(c)
    grid = np.zeros((hf, wf, c), dtype=np.float64)
    fgc = cells >= 0
    grid[fgc] = embeddings[cells[fgc]] + sigma * noise[fgc]
    norms = np.linalg.norm(grid, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        grid = np.where(norms > 0, grid / norms, 0.0)
    return FeatureGrid(grid.astype(np.float32), stride=stride, normalized=True)


def make_view_proposals(pmap: PixelPointMap, gt_labels: np.ndarray) -> np.ndarray:
    """Overlapping proposal stack for one view: the whole silhouette first,
    then one mask per visible part, mimicking multi-granularity proposals."""
    fg = pmap.indices >= 0
    pix_labels = np.full(pmap.resolution, UNLABELED, dtype=np.int64)
    pix_labels[fg] = gt_labels[pmap.indices[fg]]
    layers = [fg]
    for part in np.unique(pix_labels[pix_labels >= 0]):
        layers.append(pix_labels == part)
    return np.stack(layers).astype(np.uint8)
