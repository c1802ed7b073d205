"""Non-overlapping mask partitions and mask-level label voting.

Class-agnostic proposal stacks overlap heavily across granularities. Sorting
by area and painting large-to-small leaves, per pixel, the smallest proposal
covering it; whatever survives becomes a mutually exclusive partition whose
visible segments inherit labels by confidence-weighted voting over sampled
pixel correspondences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import UNLABELED, VoteTally, dominant_label


@dataclass(frozen=True)
class MaskProposal:
    raster: np.ndarray  # (H, W) bool
    source_order: int

    def __post_init__(self):
        r = np.ascontiguousarray(self.raster, dtype=bool)
        if r.ndim != 2:
            raise ValueError(f"mask raster must be 2-D, got {r.shape}")
        if not r.any():
            raise ValueError("empty mask proposal")
        r.setflags(write=False)
        object.__setattr__(self, "raster", r)

    @property
    def area(self) -> int:
        return int(self.raster.sum())


def proposals_from_stack(stack: np.ndarray) -> list[MaskProposal]:
    """Wrap a (M, H, W) binary stack, dropping empty layers but keeping the
    stack index as each survivor's source order."""
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ValueError(f"proposal stack must be (M, H, W), got {stack.shape}")
    out = []
    for i in range(stack.shape[0]):
        raster = stack[i] != 0
        if raster.any():
            out.append(MaskProposal(raster, source_order=i))
    return out


@dataclass(frozen=True)
class MaskPartition:
    """Pixel-to-mask id map; -1 marks pixels covered by no proposal."""

    id_map: np.ndarray  # (H, W) int32
    mask_count: int

    def __post_init__(self):
        m = np.ascontiguousarray(self.id_map, dtype=np.int32)
        if m.ndim != 2:
            raise ValueError("id_map must be 2-D")
        present = np.unique(m[m >= 0])
        if self.mask_count != len(present) or (
            len(present) and (present[0] != 0 or present[-1] != self.mask_count - 1)
        ):
            raise ValueError("mask ids must be contiguous from 0")
        m.setflags(write=False)
        object.__setattr__(self, "id_map", m)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.id_map.shape

    def mask_pixels(self, mask_id: int) -> np.ndarray:
        if not 0 <= mask_id < self.mask_count:
            raise IndexError(f"mask id {mask_id} outside [0, {self.mask_count})")
        return np.flatnonzero(self.id_map.ravel() == mask_id)


def build_nonoverlapping(
    proposals: list[MaskProposal], shape: tuple[int, int] | None = None
) -> MaskPartition:
    """Stack proposals large-to-small so each pixel keeps its smallest cover.

    Proposals are painted in descending area order (equal areas: ascending
    source order), later coats overwriting earlier ones; fully occluded
    proposals vanish and survivors are re-indexed contiguously in paint
    order. An empty input yields an empty partition, not an error.
    """
    if not proposals:
        return MaskPartition(np.full(shape or (0, 0), -1, dtype=np.int32), 0)
    res = proposals[0].raster.shape
    for p in proposals:
        if p.raster.shape != res:
            raise ValueError(
                f"proposal resolutions differ: {p.raster.shape} vs {res}"
            )
    if shape is not None and tuple(shape) != res:
        raise ValueError(f"declared shape {shape} does not match rasters {res}")

    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].area, proposals[i].source_order))
    paint = np.full(res, -1, dtype=np.int32)
    for pos, i in enumerate(order):
        paint[proposals[i].raster] = pos
    survivors = np.unique(paint[paint >= 0])
    remap = np.full(len(order), -1, dtype=np.int32)
    remap[survivors] = np.arange(len(survivors), dtype=np.int32)
    id_map = np.where(paint >= 0, remap[np.clip(paint, 0, None)], -1).astype(np.int32)
    return MaskPartition(id_map, int(len(survivors)))


def sample_pixels(
    partition: MaskPartition, mask_id: int, k: int, seed
) -> np.ndarray:
    """Up to ``k`` pixels of one mask, uniform without replacement.

    Returns an (m, 2) array of (row, col). Deterministic for a fixed seed;
    masks smaller than ``k`` are returned in full.
    """
    if k < 1:
        raise ValueError("sample count must be >= 1")
    flat = partition.mask_pixels(mask_id)
    rng = np.random.default_rng(seed)
    m = min(k, flat.size)
    chosen = rng.choice(flat.size, size=m, replace=False)
    rows, cols = np.unravel_index(flat[chosen], partition.resolution)
    return np.stack([rows, cols], axis=1).astype(np.int64)


def assign_mask_label(matches, cutoff: float = 0.6) -> tuple[int, float]:
    """Confidence-weighted vote over a mask's sampled-pixel matches.

    Each match adds max(score, 0) weight to its label; negative similarity
    is anti-evidence and contributes nothing. Unlabeled matches (-1) carry
    no part evidence and are ignored. Returns (label, confidence) where
    confidence is the winning share of total weight; abstentions (no
    dominant label, or no positive evidence at all) return (-1, 0.0).
    """
    matches = list(matches)
    if not matches:
        raise ValueError("cannot label a mask with no matches")
    pairs = [
        (m.label, max(float(m.score), 0.0)) for m in matches if m.label != UNLABELED
    ]
    tally = VoteTally.from_pairs(pairs, cutoff)
    total = tally.total()
    if total <= 0.0:
        return UNLABELED, 0.0
    winner = dominant_label(tally)
    if winner is None:
        return UNLABELED, 0.0
    return winner, tally.weights[winner] / total
