"""Extraction settings.

The model-facing defaults are pinned: dense point prompting on a 64x64
grid for mask proposals, diffusion features tapped at the first upsampling
block of the U-Net at timestep 261 with an empty text prompt. Backends
default to CPU-only classical stand-ins so extraction runs anywhere; the
model-backed backends use the pinned settings when selected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

MASK_BACKENDS = ("felzenszwalb", "sam_grid")
FEATURE_BACKENDS = ("multiscale_color", "diffusion")


@dataclass
class ExtractionConfig:
    sam_model: str = "facebook/sam-vit-huge"
    diffusion_model: str = "stabilityai/stable-diffusion-2-1"
    prompt_grid_size: tuple[int, int] = (64, 64)
    diffusion_timestep: int = 261
    feature_tap: str = "first_upsampling_block"
    text_prompt: str = ""
    mask_backend: str = "felzenszwalb"
    feature_backend: str = "multiscale_color"
    feature_stride: int = 4

    def __post_init__(self):
        self.prompt_grid_size = tuple(self.prompt_grid_size)
        if len(self.prompt_grid_size) != 2 or min(self.prompt_grid_size) < 1:
            raise ValueError(f"bad prompt grid {self.prompt_grid_size}")
        if self.diffusion_timestep < 0:
            raise ValueError("diffusion timestep must be >= 0")
        if self.mask_backend not in MASK_BACKENDS:
            raise ValueError(f"mask_backend must be one of {MASK_BACKENDS}")
        if self.feature_backend not in FEATURE_BACKENDS:
            raise ValueError(f"feature_backend must be one of {FEATURE_BACKENDS}")
        if self.feature_stride < 1:
            raise ValueError("feature_stride must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExtractionConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown extraction config keys: {unknown}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExtractionConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_json(self) -> str:
        doc = asdict(self)
        doc["prompt_grid_size"] = list(self.prompt_grid_size)
        return json.dumps(doc, indent=2, sort_keys=True)
