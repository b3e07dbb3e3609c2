"""Linear IoU-quality regressor trained with an L1 loss.

The model maps a small vector of mask and image features to an IoU
estimate.  With the ``sqrt`` target transform it regresses the square root
of the IoU, which spreads out the low-IoU end, and squares its (clamped)
output at prediction time.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .masks import InstancePrediction, decode_rle
from .rng import generator

FEATURE_NAMES = ("bias", "area", "object_count", "compactness", "boundary_noise", "clutter")
N_FEATURES = len(FEATURE_NAMES)
TRANSFORMS = ("identity", "sqrt")
# object counts are divided by this before entering the model
COUNT_SCALE = 10.0


@dataclass(frozen=True)
class ImageContext:
    """What the annotation model knows about an image besides the mask itself."""

    height: int
    width: int
    n_objects: int
    # summed area of all predicted masks in the image, in pixels
    predicted_area: int


def image_context(height: int, width: int, n_objects: int,
                  predictions: Sequence[InstancePrediction]) -> ImageContext:
    return ImageContext(height, width, n_objects, sum(p.mask.area for p in predictions))


def perimeter(raster: np.ndarray) -> int:
    """Number of foreground/background pixel edges, the raster border counting as background."""
    padded = np.pad(raster.astype(np.int8), 1)
    return int(np.abs(np.diff(padded, axis=0)).sum() + np.abs(np.diff(padded, axis=1)).sum())


def extract_features(context: ImageContext, prediction: InstancePrediction) -> np.ndarray:
    raster = decode_rle(prediction.mask)
    area = int(raster.sum())
    if area == 0:
        raise ValueError("cannot extract features from an empty mask")
    total = context.height * context.width
    perim = perimeter(raster)
    rows = np.flatnonzero(raster.any(axis=1))
    cols = np.flatnonzero(raster.any(axis=0))
    box_perim = 2 * ((rows[-1] - rows[0] + 1) + (cols[-1] - cols[0] + 1))
    # perimeter**2 / (16 * area) is 1 for a square and grows with ragged boundaries
    compactness = perim * perim / (16.0 * area)
    return np.array([
        1.0,
        np.sqrt(area / total),
        context.n_objects / COUNT_SCALE,
        1.0 - 1.0 / compactness,
        max(0.0, (perim - box_perim) / perim),
        min(1.0, context.predicted_area / total),
    ])


@dataclass(frozen=True)
class TrainingSchedule:
    phase: str = "frozen_then_iou"
    segmentation_phase_epochs: int = 150
    iou_phase_epochs: int = 100
    learning_rate: float = 0.05
    seed: int = 0
    # None means full-batch steps
    batch_size: int | None = 32
    # halve the learning rate every this many epochs; None keeps it fixed
    halve_every: int | None = 25

    def __post_init__(self):
        if self.phase not in ("joint", "frozen_then_iou"):
            raise ValueError(f"unknown training phase {self.phase!r}")
        if self.segmentation_phase_epochs < 1 or self.iou_phase_epochs < 1:
            raise ValueError("epoch counts must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    @property
    def regressor_epochs(self) -> int:
        """Epochs the IoU head is optimised for.

        Trained jointly, the head is updated during the whole run; frozen,
        only after the segmentation phase ends.
        """
        if self.phase == "joint":
            return self.segmentation_phase_epochs + self.iou_phase_epochs
        return self.iou_phase_epochs

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingSchedule":
        return cls(**d)


@dataclass
class RegressorModel:
    weights: np.ndarray
    target_transform: str = "sqrt"
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.target_transform not in TRANSFORMS:
            raise ValueError(f"unknown target transform {self.target_transform!r}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    def to_json(self) -> str:
        return json.dumps({"weights": [float(w) for w in self.weights],
                           "target_transform": self.target_transform}, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RegressorModel":
        d = json.loads(text)
        return cls(np.array(d["weights"], dtype=float), d["target_transform"])

    def curve_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(self.loss_history, start=1):
            writer.writerow([epoch, f"{loss:.9f}"])
        return buf.getvalue()


def transform_target(iou_values, transform: str) -> np.ndarray:
    values = np.asarray(iou_values, dtype=float)
    if transform == "sqrt":
        return np.sqrt(values)
    if transform == "identity":
        return values
    raise ValueError(f"unknown target transform {transform!r}")


def predict_iou(model: RegressorModel, features) -> float:
    x = np.asarray(features, dtype=float)
    if x.shape != model.weights.shape:
        raise ValueError(f"feature length {x.shape} does not match weights {model.weights.shape}")
    raw = min(1.0, max(0.0, float(model.weights @ x)))
    return raw * raw if model.target_transform == "sqrt" else raw


def l1_loss(weights: np.ndarray, X: np.ndarray, targets: np.ndarray) -> float:
    """Mean absolute residual of the unclamped linear output."""
    return float(np.mean(np.abs(X @ weights - targets)))


def l1_subgradient(weights: np.ndarray, X: np.ndarray, targets: np.ndarray) -> np.ndarray:
    residual = X @ weights - targets
    return X.T @ np.sign(residual) / len(targets)


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        raise ValueError("no training samples")
    X = np.array([np.asarray(f, dtype=float) for f, _ in samples])
    y = np.array([float(t) for _, t in samples])
    if np.any((y < 0) | (y > 1)):
        raise ValueError("true IoU values must lie in [0, 1]")
    return X, y


def train(samples: Sequence[tuple[Sequence[float], float]],
          schedule: TrainingSchedule = TrainingSchedule(),
          transform: str = "sqrt") -> RegressorModel:
    """Stochastic subgradient descent on the mean L1 loss, starting from zero weights."""
    X, y = _as_arrays(samples)
    targets = transform_target(y, transform)
    rng = generator(schedule.seed, "regressor")
    w = np.zeros(X.shape[1])
    lr = schedule.learning_rate
    history = []
    n = len(y)
    batch = n if schedule.batch_size is None else schedule.batch_size
    for epoch in range(1, schedule.regressor_epochs + 1):
        order = np.arange(n) if schedule.batch_size is None else rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            w = w - lr * l1_subgradient(w, X[idx], targets[idx])
        history.append(l1_loss(w, X, targets))
        if schedule.halve_every and epoch % schedule.halve_every == 0:
            lr /= 2
    return RegressorModel(w, transform, history)


def evaluate_mae(model: RegressorModel, samples) -> float:
    """Mean absolute IoU error in percentage points (on the IoU, not the target)."""
    X, y = _as_arrays(samples)
    preds = np.array([predict_iou(model, x) for x in X])
    return float(100.0 * np.mean(np.abs(preds - y)))


def low_iou_heavy_samples(n: int, seed: int, noise: float = 0.0) -> tuple[list, np.ndarray]:
    """Synthetic training set whose IoUs cluster near zero.

    The square-root IoU is linear in the features, so the ``sqrt`` model is
    well specified here while the ``identity`` model is not.  Returns the
    samples and the generating weights.
    """
    rng = generator(seed, "low_iou_heavy")
    w_true = np.array([0.05, 0.6, -0.2, -0.1, -0.15, 0.1])
    X = np.column_stack([np.ones(n), rng.uniform(0.0, 1.0, size=(n, N_FEATURES - 1)) ** 2])
    root = np.clip(X @ w_true + noise * rng.standard_normal(n), 0.0, 1.0)
    return [(x, float(r * r)) for x, r in zip(X, root)], w_true
