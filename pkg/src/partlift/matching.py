"""Dense semantic-correspondence search over per-view feature grids.

A feature grid stores one descriptor per stride x stride pixel block. All
matching is cosine-similarity argmax; the exhaustive scan is the reference
semantics, and the coarse-to-fine matcher reproduces it whenever the true
best match lies inside the refinement window around the coarse winner.
Every search increments an optional similarity-evaluation counter so the
claimed speedups can be checked by arithmetic instead of wall clocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import UNLABELED


class MatchError(ValueError):
    """No valid candidate to match against (all-zero grid or empty database)."""


@dataclass
class SimilarityCounter:
    """Counts individual cosine-similarity evaluations across searches."""

    total: int = 0

    def add(self, n: int) -> None:
        self.total += int(n)


@dataclass(eq=False)
class FeatureGrid:
    """Dense (Hf, Wf, C) float32 descriptors at a fixed pixel stride.

    ``normalized`` asserts every nonzero cell is unit length; zero cells mark
    background and never win a match. Instances are treated as immutable.
    """

    data: np.ndarray
    stride: int
    normalized: bool = True

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"feature grid must be (Hf, Wf, C), got {arr.shape}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        norms = np.linalg.norm(arr.reshape(-1, arr.shape[2]), axis=1)
        if self.normalized:
            nz = norms > 0
            if nz.any() and np.abs(norms[nz] - 1.0).max() >= 1e-4:
                raise ValueError("normalized grid holds non-unit nonzero vectors")
        arr.setflags(write=False)
        self.data = arr
        self._norms = norms
        self._zero = norms == 0.0

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def n_cells(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    def covers(self, height: int, width: int) -> bool:
        hf, wf = self.grid_shape
        return hf * self.stride >= height and wf * self.stride >= width

    def cell_scores(self, query: np.ndarray) -> np.ndarray:
        """Cosine similarity of every cell against ``query`` (-inf for zero cells)."""
        q = np.asarray(query, dtype=np.float64)
        qn = np.linalg.norm(q)
        if qn == 0:
            raise MatchError("query vector must be nonzero")
        flat = self.data.reshape(-1, self.channels)
        dots = flat @ (q / qn)
        if not self.normalized:
            dots = dots / np.where(self._zero, 1.0, self._norms)
        return np.where(self._zero, -np.inf, dots)


@dataclass(frozen=True)
class MatchResult:
    db_image: int
    pixel: tuple[int, int]  # (row, col) at the database image's grid resolution
    score: float
    label: int

    def __post_init__(self):
        if not -1.0 - 1e-6 <= self.score <= 1.0 + 1e-6:
            raise ValueError(f"cosine score {self.score} outside [-1, 1]")
        if self.label < UNLABELED:
            raise ValueError(f"label id {self.label} below -1")


@dataclass
class DatabaseImage:
    """One annotated database image: fine grid, aligned labels, optional coarse grid."""

    image_id: int
    fine: FeatureGrid
    labels: np.ndarray  # (Hf, Wf) int32 part labels or -1
    coarse: FeatureGrid | None = None

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int32)
        if lab.shape != self.fine.grid_shape:
            raise ValueError(
                f"db image {self.image_id}: label raster {lab.shape} not aligned "
                f"to fine grid {self.fine.grid_shape}"
            )
        lab.setflags(write=False)
        self.labels = lab


@dataclass
class LabeledDatabase:
    images: list[DatabaseImage] = field(default_factory=list)

    def __post_init__(self):
        ids = [im.image_id for im in self.images]
        if len(set(ids)) != len(ids):
            raise ValueError("database image ids must be unique")
        self.images = sorted(self.images, key=lambda im: im.image_id)

    def __len__(self) -> int:
        return len(self.images)

    def with_coarse(self, ratio: int) -> "LabeledDatabase":
        """Fill in pooled coarse grids wherever an image lacks a native one."""
        out = []
        for im in self.images:
            coarse = im.coarse if im.coarse is not None else pool_coarse(im.fine, ratio)
            out.append(DatabaseImage(im.image_id, im.fine, im.labels, coarse))
        return LabeledDatabase(out)


def pool_coarse(fine: FeatureGrid, ratio: int) -> FeatureGrid:
    """Block-average the fine grid by ``ratio`` and re-normalize nonzero cells."""
    if ratio < 1:
        raise ValueError("pooling ratio must be >= 1")
    hf, wf = fine.grid_shape
    hc = math.ceil(hf / ratio)
    wc = math.ceil(wf / ratio)
    row_starts = np.arange(hc) * ratio
    col_starts = np.arange(wc) * ratio
    summed = np.add.reduceat(fine.data.astype(np.float64), row_starts, axis=0)
    summed = np.add.reduceat(summed, col_starts, axis=1)
    row_n = np.minimum(row_starts + ratio, hf) - row_starts
    col_n = np.minimum(col_starts + ratio, wf) - col_starts
    counts = row_n[:, None] * col_n[None, :]
    pooled = summed / counts[:, :, None]
    norms = np.linalg.norm(pooled, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pooled = np.where(norms > 0, pooled / norms, 0.0)
    return FeatureGrid(pooled.astype(np.float32), stride=fine.stride * ratio, normalized=True)


def pixel_feature(grid: FeatureGrid, pixel: tuple[float, float]):
    """Bilinearly interpolated descriptor at an image pixel.

    Returns (vector, zero_norm): the interpolant can cancel to zero between
    opposing cells, in which case it is returned as-is with the flag set.
    Normalized grids re-normalize any nonzero interpolant.
    """
    row, col = float(pixel[0]), float(pixel[1])
    hf, wf = grid.grid_shape
    s = grid.stride
    if not (0 <= row < hf * s and 0 <= col < wf * s):
        raise IndexError(f"pixel {pixel} outside grid coverage {(hf * s, wf * s)}")
    gr = min(max((row + 0.5) / s - 0.5, 0.0), hf - 1.0)
    gc = min(max((col + 0.5) / s - 0.5, 0.0), wf - 1.0)
    r0 = min(int(math.floor(gr)), hf - 1)
    c0 = min(int(math.floor(gc)), wf - 1)
    r1 = min(r0 + 1, hf - 1)
    c1 = min(c0 + 1, wf - 1)
    fr = gr - r0
    fc = gc - c0
    d = grid.data.astype(np.float64)
    vec = (
        d[r0, c0] * (1 - fr) * (1 - fc)
        + d[r0, c1] * (1 - fr) * fc
        + d[r1, c0] * fr * (1 - fc)
        + d[r1, c1] * fr * fc
    )
    n = np.linalg.norm(vec)
    if n == 0.0:
        return vec, True
    if grid.normalized:
        vec = vec / n
    return vec, False


def brute_force_match(
    query: np.ndarray, grid: FeatureGrid, counter: SimilarityCounter | None = None
) -> tuple[tuple[int, int], float]:
    """Exhaustive cosine argmax over every cell; ties break to the lowest
    row-major index."""
    scores = grid.cell_scores(query)
    if counter is not None:
        counter.add(grid.n_cells)
    best = int(np.argmax(scores))
    if not np.isfinite(scores[best]):
        raise MatchError("grid has no nonzero cell to match against")
    hf, wf = grid.grid_shape
    return (best // wf, best % wf), float(scores[best])


def coarse_to_fine_match(
    query: np.ndarray,
    coarse: FeatureGrid,
    fine: FeatureGrid,
    window: int = 3,
    counter: SimilarityCounter | None = None,
) -> tuple[tuple[int, int], float]:
    """Locate the best coarse cell, then search only the fine cells under the
    window x window coarse block centered there (clamped at borders)."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    if coarse.stride % fine.stride != 0:
        raise ValueError(
            f"coarse stride {coarse.stride} must be a multiple of fine stride {fine.stride}"
        )
    ratio = coarse.stride // fine.stride
    (cr, cc), _ = brute_force_match(query, coarse, counter)

    half = window // 2
    hc, wc = coarse.grid_shape
    hf, wf = fine.grid_shape
    r0 = max(cr - half, 0) * ratio
    c0 = max(cc - half, 0) * ratio
    r1 = min((min(cr + half, hc - 1) + 1) * ratio, hf)
    c1 = min((min(cc + half, wc - 1) + 1) * ratio, wf)

    sub = fine.data[r0:r1, c0:c1]
    subgrid = FeatureGrid(sub, stride=fine.stride, normalized=fine.normalized)
    (sr, sc), score = brute_force_match(query, subgrid, counter)
    return (r0 + sr, c0 + sc), score


def best_match_over_db(
    query: np.ndarray,
    db: LabeledDatabase,
    window: int = 3,
    counter: SimilarityCounter | None = None,
    exhaustive: bool = False,
) -> MatchResult:
    """Best correspondence across every database image (ties -> lowest id).

    Requires coarse grids on every image unless ``exhaustive`` is set, in
    which case each image is scanned in full.
    """
    if len(db) == 0:
        raise MatchError("database is empty")
    best: MatchResult | None = None
    for im in db.images:
        if exhaustive:
            pixel, score = brute_force_match(query, im.fine, counter)
        else:
            if im.coarse is None:
                raise ValueError(
                    f"db image {im.image_id} lacks a coarse grid; "
                    "call LabeledDatabase.with_coarse first"
                )
            pixel, score = coarse_to_fine_match(query, im.coarse, im.fine, window, counter)
        if best is None or score > best.score:
            best = MatchResult(
                db_image=im.image_id,
                pixel=pixel,
                score=score,
                label=int(im.labels[pixel]),
            )
    return best
