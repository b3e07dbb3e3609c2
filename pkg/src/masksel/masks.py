"""Run-length encoded binary masks, instance IoU and the per-image IoU Score.

Runs are row-major and alternate background/foreground, starting with a
background run.  A zero-length first run is the only zero allowed, so every
raster has exactly one encoding.

The interchange format is ``{"size": [h, w], "counts": [r0, r1, ...]}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MaskDimensionError(ValueError):
    """Raised for empty rasters or masks whose dimensions disagree."""


@dataclass(frozen=True)
class BinaryMask:
    height: int
    width: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise MaskDimensionError(f"mask dimensions must be positive, got {self.height}x{self.width}")
        runs = tuple(int(r) for r in self.runs)
        object.__setattr__(self, "runs", runs)
        if not runs:
            raise ValueError("a mask needs at least one run")
        if runs[0] < 0 or any(r <= 0 for r in runs[1:]):
            raise ValueError("runs after the first must be strictly positive")
        if sum(runs) != self.height * self.width:
            raise ValueError(
                f"runs sum to {sum(runs)}, expected {self.height * self.width}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def area(self) -> int:
        return sum(self.runs[1::2])

    def intervals(self) -> np.ndarray:
        """Foreground intervals ``[start, end)`` over the flattened raster, shape (k, 2)."""
        bounds = np.cumsum((0,) + self.runs)
        return np.column_stack((bounds[1:-1:2], bounds[2::2]))

    def to_dict(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.runs)}

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryMask":
        h, w = d["size"]
        return cls(int(h), int(w), tuple(d["counts"]))


def encode_rle(raster) -> BinaryMask:
    """Encode a 2D boolean raster."""
    arr = np.asarray(raster, dtype=bool)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise MaskDimensionError(f"expected a non-empty 2D raster, got shape {arr.shape}")
    flat = arr.ravel()
    # positions where the value flips, plus both ends
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return BinaryMask(arr.shape[0], arr.shape[1], tuple(runs))


def decode_rle(mask: BinaryMask) -> np.ndarray:
    values = np.zeros(len(mask.runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, mask.runs)
    return flat.reshape(mask.height, mask.width)


def _check_same_shape(a: BinaryMask, b: BinaryMask):
    if a.shape != b.shape:
        raise MaskDimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")


def intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    """|A ∩ B| from the interval boundaries of both masks.

    Boundaries are swept in order with +1 at interval starts and -1 at ends;
    stretches where the running coverage is 2 belong to both masks.
    """
    _check_same_shape(a, b)
    ia, ib = a.intervals(), b.intervals()
    if len(ia) == 0 or len(ib) == 0:
        return 0
    pos = np.concatenate((ia[:, 0], ia[:, 1], ib[:, 0], ib[:, 1]))
    delta = np.concatenate((np.ones(len(ia), np.int64), -np.ones(len(ia), np.int64),
                            np.ones(len(ib), np.int64), -np.ones(len(ib), np.int64)))
    order = np.argsort(pos, kind="stable")
    pos, coverage = pos[order], np.cumsum(delta[order])
    return int(np.sum(np.diff(pos)[coverage[:-1] == 2]))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks.

    Areas are summed as integers and divided once.  Two empty masks have
    IoU 0.0.
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def image_iou_score(per_object_ious: Sequence[float]) -> float:
    """Mean of the per-object IoUs of one image."""
    values = list(per_object_ious)
    if not values:
        raise ValueError("an image with no instances has no IoU Score")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"IoU values must lie in [0, 1], got {v}")
    return sum(values) / len(values)


@dataclass(frozen=True)
class InstanceAnnotation:
    class_id: int
    mask: BinaryMask

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        if self.mask.area < 1:
            raise ValueError("annotated instance masks must cover at least one pixel")


@dataclass(frozen=True)
class InstancePrediction:
    class_id: int
    mask: BinaryMask
    confidence: float
    predicted_iou: float | None = None
    # index of the ground-truth instance this prediction was generated from
    source_index: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.predicted_iou is not None and not 0.0 <= self.predicted_iou <= 1.0:
            raise ValueError(f"predicted_iou must lie in [0, 1], got {self.predicted_iou}")

