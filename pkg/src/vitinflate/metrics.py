"""Dice scores and per-class label statistics for ``[H, W, D]`` masks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .checkpoint_io import SegmentationMask
from .errors import ShapeError, UndefinedMetricError


def _voxels(mask) -> np.ndarray:
    return np.asarray(mask.data if isinstance(mask, SegmentationMask) else mask)


def _dice(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = int(a.sum()), int(b.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (sa + sb)


def dice(pred, label, c: int) -> float:
    """``2|P & L| / (|P| + |L|)`` for class ``c``; 1.0 when both are empty."""
    p, l = _voxels(pred), _voxels(label)
    if p.shape != l.shape:
        raise ShapeError(f"dice: prediction {p.shape} and label {l.shape} differ")
    return _dice(p == c, l == c)


def mean_dice(pred, label, classes: Iterable[int]) -> float:
    classes = list(classes)
    if not classes:
        raise ValueError("mean_dice needs at least one class")
    scores = [dice(pred, label, c) for c in classes]
    return sum(scores) / len(scores)


def slice_variation(label, c: int, include_empty_pairs: bool = False) -> float:
    """Mean Dice between the class-``c`` masks of adjacent depth slices.

    By default pairs where neither slice contains the class are skipped;
    ``include_empty_pairs=True`` counts them as perfect agreement.
    """
    l = _voxels(label) == c
    if l.ndim != 3 or l.shape[-1] < 2:
        raise ShapeError(f"slice_variation needs an [H, W, D] mask with D >= 2, got {l.shape}")
    if not l.any():
        raise UndefinedMetricError(f"class {c} does not occur in the volume")
    scores = []
    for d in range(l.shape[-1] - 1):
        a, b = l[:, :, d], l[:, :, d + 1]
        if not include_empty_pairs and not (a.any() or b.any()):
            continue
        scores.append(_dice(a, b))
    return sum(scores) / len(scores)


def class_stats(label, c: int) -> tuple[int, int]:
    """``(voxel_count, slice_count)`` of class ``c``."""
    l = _voxels(label) == c
    return int(l.sum()), int(l.reshape(-1, l.shape[-1]).any(axis=0).sum())


@dataclass
class DiceReport:
    per_class: dict[int, float]
    mean_dsc: float | None
    classes: list[int]
    stats: dict[int, dict] = field(default_factory=dict)

    def to_json(self, **kwargs) -> str:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        d["stats"] = {str(k): v for k, v in self.stats.items()}
        return json.dumps(d, sort_keys=True, **kwargs)


def dice_report(pred, label, classes: Iterable[int] | None = None) -> DiceReport:
    """Per-class Dice, their mean, and label statistics for every class.

    ``classes`` defaults to all foreground ids present in either mask.
    """
    p, l = _voxels(pred), _voxels(label)
    if classes is None:
        classes = sorted(int(c) for c in np.union1d(np.unique(p), np.unique(l)) if c != 0)
    classes = list(classes)
    per_class = {c: dice(p, l, c) for c in classes}
    stats = {}
    for c in classes:
        voxels, slices = class_stats(l, c)
        try:
            variation = slice_variation(l, c)
        except (UndefinedMetricError, ShapeError):
            variation = None
        stats[c] = {"voxels": voxels, "slices": slices, "slice_variation": variation}
    mean = mean_dice(p, l, classes) if classes else None
    return DiceReport(per_class, mean, classes, stats)
