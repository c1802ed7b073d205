"""Per-image extraction: masks + features in, engine-readable files out."""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from partlift.core import save_tensor

from .config import ExtractionConfig
from .features import extract_features
from .proposals import generate_proposals


@dataclass
class ExtractedView:
    mask_stack: np.ndarray  # (M, H, W) uint8
    features: np.ndarray  # (Hf, Wf, C) float32, unit rows
    stride: int
    normalized: bool = True


def extract_view(image: np.ndarray, config: ExtractionConfig) -> ExtractedView:
    """Run both backends on one RGB image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected uint8 RGB (H, W, 3), got {image.shape} {image.dtype}")
    stack = generate_proposals(image, config)
    features, stride = extract_features(image, config)
    hf, wf = features.shape[:2]
    if hf * stride < image.shape[0] or wf * stride < image.shape[1]:
        raise RuntimeError(
            f"feature grid {features.shape[:2]} at stride {stride} does not cover {image.shape[:2]}"
        )
    return ExtractedView(stack, features, stride)


def write_view_files(view: ExtractedView, out_dir) -> dict[str, Path]:
    """Emit proposals.tbt, features.tbt, features.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "proposals": out / "proposals.tbt",
        "features": out / "features.tbt",
        "sidecar": out / "features.json",
    }
    save_tensor(view.mask_stack.astype(np.uint8), paths["proposals"])
    save_tensor(view.features.astype(np.float32), paths["features"])
    paths["sidecar"].write_text(
        json.dumps({"normalized": view.normalized, "stride": view.stride}, sort_keys=True)
    )
    return paths


def content_key(image: np.ndarray, config: ExtractionConfig) -> str:
    h = hashlib.sha256()
    h.update(config.to_json().encode())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.hexdigest()[:32]


def extract_to_dir(
    image: np.ndarray, out_dir, config: ExtractionConfig, cache_dir=None
) -> dict[str, Path]:
    """Extraction with optional content-hash caching of the emitted files."""
    if cache_dir is not None:
        slot = Path(cache_dir) / content_key(image, config)
        if not slot.exists():
            write_view_files(extract_view(image, config), slot)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, fname in (
            ("proposals", "proposals.tbt"),
            ("features", "features.tbt"),
            ("sidecar", "features.json"),
        ):
            shutil.copyfile(slot / fname, out / fname)
            paths[name] = out / fname
        return paths
    return write_view_files(extract_view(image, config), out_dir)
