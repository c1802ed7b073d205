"""Class-agnostic mask proposal backends.

``felzenszwalb_proposals`` is the default: graph-based segmentation at
several scales gives overlapping multi-granularity regions on any CPU.
``sam_grid_proposals`` drives a segment-anything checkpoint with a dense
point-prompt grid; it needs `transformers`, `torch`, and downloaded weights.
"""

from __future__ import annotations

import numpy as np

from .config import ExtractionConfig

FELZENSZWALB_SCALES = (60.0, 180.0, 420.0)


def felzenszwalb_proposals(
    image: np.ndarray, min_area_frac: float = 0.001, max_masks: int = 192
) -> np.ndarray:
    """Overlapping (M, H, W) uint8 proposal stack from multi-scale
    graph-based segmentation."""
    from skimage.segmentation import felzenszwalb

    h, w = image.shape[:2]
    min_area = max(int(min_area_frac * h * w), 8)
    per_scale = max(max_masks // len(FELZENSZWALB_SCALES), 1)
    layers = []
    for scale in FELZENSZWALB_SCALES:
        seg = felzenszwalb(image, scale=scale, sigma=0.8, min_size=min_area)
        candidates = []
        for sid in np.unique(seg):
            mask = seg == sid
            area = int(mask.sum())
            if area >= min_area:
                candidates.append((area, int(sid), mask))
        # keep the largest regions of each scale so every granularity survives
        candidates.sort(key=lambda t: (-t[0], t[1]))
        layers.extend(mask for _, _, mask in candidates[:per_scale])
    if not layers:
        layers = [np.ones((h, w), dtype=bool)]
    return np.stack(layers[:max_masks]).astype(np.uint8)


def sam_grid_proposals(image: np.ndarray, config: ExtractionConfig) -> np.ndarray:
    """Segment-anything masks prompted with a dense point grid.

    Requires the `transformers` SAM port plus model weights; raises a clear
    error when either is unavailable.
    """
    try:
        import torch
        from transformers import SamModel, SamProcessor
    except ImportError as exc:
        raise RuntimeError(
            f"sam_grid backend needs torch+transformers with SAM support: {exc}"
        ) from exc
    try:
        processor = SamProcessor.from_pretrained(config.sam_model)
        model = SamModel.from_pretrained(config.sam_model)
    except OSError as exc:
        raise RuntimeError(
            f"could not load SAM weights {config.sam_model!r}: {exc}"
        ) from exc

    h, w = image.shape[:2]
    gh, gw = config.prompt_grid_size
    ys = (np.arange(gh) + 0.5) / gh * h
    xs = (np.arange(gw) + 0.5) / gw * w
    points = [[[float(x), float(y)]] for y in ys for x in xs]

    masks: list[np.ndarray] = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(points), 64):
            chunk = points[start : start + 64]
            inputs = processor(image, input_points=[chunk], return_tensors="pt")
            outputs = model(**inputs)
            batch = processor.image_processor.post_process_masks(
                outputs.pred_masks.cpu(),
                inputs["original_sizes"].cpu(),
                inputs["reshaped_input_sizes"].cpu(),
            )[0]
            scores = outputs.iou_scores.cpu().numpy().reshape(len(chunk), -1)
            arr = batch.numpy().reshape(len(chunk), -1, h, w)
            for i in range(len(chunk)):
                best = int(scores[i].argmax())
                m = arr[i, best] != 0
                if m.any():
                    masks.append(m)
    if not masks:
        raise RuntimeError("SAM produced no masks")
    # deduplicate identical rasters, keeping prompt order
    uniq: list[np.ndarray] = []
    seen = set()
    for m in masks:
        key = m.tobytes()
        if key not in seen:
            seen.add(key)
            uniq.append(m)
    return np.stack(uniq).astype(np.uint8)


def generate_proposals(image: np.ndarray, config: ExtractionConfig) -> np.ndarray:
    if config.mask_backend == "felzenszwalb":
        return felzenszwalb_proposals(image)
    return sam_grid_proposals(image, config)
