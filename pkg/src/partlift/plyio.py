"""ASCII PLY export of labeled point clouds for quick visual inspection."""

from __future__ import annotations

import numpy as np

from .core import UNLABELED

GRAY = (128, 128, 128)

# distinct, colorblind-friendly-ish base palette; cycled for large vocabularies
_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
]


def default_colormap(n_labels: int) -> np.ndarray:
    if n_labels < 0:
        raise ValueError("n_labels must be >= 0")
    return np.array(
        [_PALETTE[i % len(_PALETTE)] for i in range(max(n_labels, 1))], dtype=np.uint8
    )


def export_ply(positions, labels, colormap=None) -> str:
    """Per-vertex colored ASCII PLY; unlabeled points come out gray."""
    positions = np.asarray(positions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (positions.shape[0],):
        raise ValueError(
            f"labels length {labels.shape} does not match {positions.shape[0]} points"
        )
    if colormap is None:
        colormap = default_colormap(int(labels.max()) + 1 if labels.size else 0)
    colormap = np.asarray(colormap, dtype=np.uint8)

    colors = np.empty((len(labels), 3), dtype=np.uint8)
    unl = labels == UNLABELED
    colors[unl] = GRAY
    if (~unl).any():
        if labels[~unl].max() >= len(colormap):
            raise ValueError("colormap too small for the label range")
        colors[~unl] = colormap[labels[~unl]]

    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(labels)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for (x, y, z), (r, g, b) in zip(positions, colors):
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}")
    return "\n".join(lines) + "\n"
