"""Per-part IoU and category mIoU, in two protocols.

``standard`` scores every part of the vocabulary on every object, counting
an absent part as 0 unless the prediction is also empty there. ``partnete``
omits a part from an object's score entirely when the ground truth lacks it,
so categories are averaged only over parts that actually occur.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODES = ("standard", "partnete")

#: sentinel for "part omitted from this object's score" (partnete protocol)
EXCLUDED = None


@dataclass(frozen=True)
class IoUReport:
    mode: str
    per_part: dict[int, float | None]  # label id -> mean IoU or EXCLUDED
    category_miou: float | None
    counters: dict[int, int]  # label id -> number of included object scores

    def __post_init__(self):
        included = [v for v in self.per_part.values() if v is not None]
        if included:
            mean = float(np.mean(included))
            if self.category_miou is None or abs(mean - self.category_miou) > 1e-9:
                raise ValueError("category_miou inconsistent with per-part values")
        elif self.category_miou is not None:
            raise ValueError("category_miou must be None when every part is excluded")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "per_part": {
                str(k): ("excluded" if v is None else v)
                for k, v in sorted(self.per_part.items())
            },
            "category_miou": self.category_miou,
            "counters": {str(k): v for k, v in sorted(self.counters.items())},
        }


def iou(pred, gt, part: int, mode: str = "standard") -> float | None:
    """IoU of one part's indicator sets, or EXCLUDED under the partnete rule.

    Unlabeled predictions (-1) simply never belong to any part. An empty
    union scores 0 in standard mode rather than dividing by zero.
    """
    if mode not in MODES:
        raise ValueError(f"unknown metric mode {mode!r}")
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred length {pred.shape} != gt length {gt.shape}")
    p = pred == part
    g = gt == part
    if mode == "partnete" and not g.any():
        return EXCLUDED
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 0.0
    inter = int(np.count_nonzero(p & g))
    return inter / union


def object_report(pred, gt, parts, mode: str = "standard") -> dict[int, float | None]:
    """Per-part IoU map for one object."""
    return {part: iou(pred, gt, part, mode) for part in parts}


def miou_category(object_reports, parts, mode: str = "standard") -> IoUReport:
    """Average per-object part scores into one category report.

    Each part's score is the mean over objects where it was not excluded;
    the category mIoU is the mean over parts holding at least one included
    value.
    """
    object_reports = list(object_reports)
    if not object_reports:
        raise ValueError("need at least one object report")
    per_part: dict[int, float | None] = {}
    counters: dict[int, int] = {}
    for part in parts:
        vals = [r[part] for r in object_reports if r.get(part) is not None]
        counters[part] = len(vals)
        per_part[part] = float(np.mean(vals)) if vals else EXCLUDED
    included = [v for v in per_part.values() if v is not None]
    category = float(np.mean(included)) if included else None
    return IoUReport(mode=mode, per_part=per_part, category_miou=category, counters=counters)


def evaluate_objects(pairs, parts, mode: str = "standard") -> IoUReport:
    """Convenience: object (pred, gt) pairs straight to a category report."""
    reports = [object_report(pred, gt, parts, mode) for pred, gt in pairs]
    return miou_category(reports, parts, mode)
