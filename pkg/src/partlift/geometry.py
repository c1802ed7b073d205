"""Pinhole cameras, z-buffered point splatting, and 2D-to-3D label transfer.

Views are rendered by splatting each 3D point onto a small pixel disk and
keeping, per pixel, the point with the smallest camera-space depth. The
resulting pixel-to-point index map is what the rest of the pipeline consumes;
there is no shading and no mesh rasterization here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import UNLABELED, VoteTally, dominant_label


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a 4x4 world-to-camera transform.

    The camera looks down +z in its own frame; only points with positive
    camera-space depth are in front of it.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray  # (4, 4) row-major

    def __post_init__(self):
        m = np.asarray(self.world_to_cam, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"world_to_cam must be 4x4, got {m.shape}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("world_to_cam bottom row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block must be orthonormal within 1e-6")
        m.setflags(write=False)
        object.__setattr__(self, "world_to_cam", m)

    def camera_space(self, positions: np.ndarray) -> np.ndarray:
        pts = np.asarray(positions, dtype=np.float64)
        return pts @ self.world_to_cam[:3, :3].T + self.world_to_cam[:3, 3]

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "world_to_cam": [float(v) for v in self.world_to_cam.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraModel":
        return cls(
            fx=float(doc["fx"]),
            fy=float(doc["fy"]),
            cx=float(doc["cx"]),
            cy=float(doc["cy"]),
            width=int(doc["width"]),
            height=int(doc["height"]),
            world_to_cam=np.array(doc["world_to_cam"], dtype=np.float64).reshape(4, 4),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CameraModel":
        return cls.from_dict(json.loads(text))


def look_at_extrinsic(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera matrix for a camera at ``eye`` looking at ``target``.

    Right-handed, camera +z points from eye toward target, +y points
    "down" in world terms so that images come out upright.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        # looking straight along up; pick any perpendicular
        alt = np.array([1.0, 0.0, 0.0])
        if abs(fwd @ alt) > 0.9:
            alt = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, alt)
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])  # rows: camera x, y, z in world coords
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = -rot @ eye
    return m


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray  # (N, 3) world coordinates
    gt_labels: np.ndarray | None = None  # (N,) label ids or -1

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (N>=1, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.gt_labels is not None:
            lab = np.asarray(self.gt_labels, dtype=np.int32)
            if lab.shape != (pos.shape[0],):
                raise ValueError(
                    f"gt_labels length {lab.shape} does not match {pos.shape[0]} points"
                )
            if lab.min(initial=0) < UNLABELED:
                raise ValueError("labels below -1 are not valid")
            lab.setflags(write=False)
            object.__setattr__(self, "gt_labels", lab)

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class PixelPointMap:
    """Per-pixel winning point index (-1 background) and camera-space depth."""

    indices: np.ndarray  # (H, W) int32
    depth: np.ndarray  # (H, W) float32, +inf where background
    empty: bool = False  # warning: nothing landed in front of this camera

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int32)
        dep = np.asarray(self.depth, dtype=np.float32)
        if idx.ndim != 2 or idx.shape != dep.shape:
            raise ValueError("indices and depth must be equal 2-D shapes")
        fg = idx >= 0
        if not (np.all(np.isfinite(dep[fg])) and np.all(np.isinf(dep[~fg]))):
            raise ValueError("finite depth exactly where a point index is stored")
        idx.setflags(write=False)
        dep.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "depth", dep)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.indices.shape


def _disk_offsets(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    span = np.arange(-r, r + 1)
    dr, dc = np.meshgrid(span, span, indexing="ij")
    keep = dr * dr + dc * dc <= radius * radius
    return np.stack([dr[keep], dc[keep]], axis=1)


def project_points(
    cloud: PointCloud, cam: CameraModel, splat_radius: float = 1.0
) -> PixelPointMap:
    """Z-buffered splat of every point onto the image plane.

    Each point in front of the camera covers the pixel disk of the given
    radius around its projection; per pixel the smallest depth wins, and
    exact depth ties go to the lower point index. Equivalent to the obvious
    sequential loop regardless of how the work is batched.
    """
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    h, w = cam.height, cam.width
    pts = cam.camera_space(cloud.positions)
    z = pts[:, 2]
    front = z > 0
    idx_front = np.flatnonzero(front)

    indices = np.full((h, w), -1, dtype=np.int32)
    depth = np.full((h, w), np.inf, dtype=np.float32)
    if idx_front.size == 0:
        return PixelPointMap(indices, depth, empty=True)

    zf = z[idx_front]
    u = cam.fx * pts[idx_front, 0] / zf + cam.cx
    v = cam.fy * pts[idx_front, 1] / zf + cam.cy
    pc = np.round(u).astype(np.int64)
    pr = np.round(v).astype(np.int64)

    offsets = _disk_offsets(splat_radius)
    rows = pr[:, None] + offsets[None, :, 0]
    cols = pc[:, None] + offsets[None, :, 1]
    point = np.broadcast_to(idx_front[:, None], rows.shape)
    zz = np.broadcast_to(zf[:, None], rows.shape)

    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    rows, cols, point, zz = rows[ok], cols[ok], point[ok], zz[ok]
    if rows.size == 0:
        return PixelPointMap(indices, depth, empty=True)

    pix = rows * w + cols
    order = np.lexsort((point, zz, pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]

    indices.ravel()[pix[win]] = point[win].astype(np.int32)
    depth.ravel()[pix[win]] = zz[win].astype(np.float32)
    return PixelPointMap(indices, depth, empty=False)


def backproject_labels(
    views, n_points: int, cutoff: float = 0.6
) -> np.ndarray:
    """Vote per-pixel 2D labels back onto the 3D points they display.

    ``views`` is a sequence of (PixelPointMap, label raster) pairs whose
    rasters hold final per-pixel part labels (-1 where unlabeled). Every
    (view, pixel) observing a point contributes one unit vote for its
    raster label; the dominant label under ``cutoff`` wins, otherwise -1.
    """
    max_label = UNLABELED
    for vi, (pmap, raster) in enumerate(views):
        raster = np.asarray(raster)
        if raster.shape != pmap.indices.shape:
            raise ValueError(
                f"view {vi}: label raster {raster.shape} does not match "
                f"map resolution {pmap.indices.shape}"
            )
        fg = pmap.indices >= 0
        if fg.any() and int(pmap.indices[fg].max()) >= n_points:
            raise IndexError(
                f"view {vi}: stored point index "
                f"{int(pmap.indices[fg].max())} out of bounds for {n_points} points"
            )
        if raster.size:
            max_label = max(max_label, int(raster.max()))

    labels = np.full(n_points, UNLABELED, dtype=np.int32)
    if max_label < 0:
        return labels

    counts = np.zeros((n_points, max_label + 1), dtype=np.int64)
    for pmap, raster in views:
        raster = np.asarray(raster)
        sel = (pmap.indices >= 0) & (raster >= 0)
        np.add.at(counts, (pmap.indices[sel], raster[sel]), 1)

    for p in np.flatnonzero(counts.sum(axis=1)):
        tally = VoteTally(cutoff)
        for lab in np.flatnonzero(counts[p]):
            tally.add(int(lab), float(counts[p, lab]))
        winner = dominant_label(tally)
        if winner is not None:
            labels[p] = winner
    return labels
