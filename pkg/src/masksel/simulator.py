"""Synthetic instance-segmentation world and a skill-based surrogate segmenter.

Scenes hold jittered rectangles and ellipses.  The surrogate stands in for a
trained network: its per-bin skill saturates with the number of training
instances seen in that (object size, clutter) bin, and low skill turns into
larger boundary shifts, translations and missed instances.  Because the shift
is measured in pixels, small objects lose more IoU than large ones at the
same skill.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .masks import (BinaryMask, InstanceAnnotation, InstancePrediction, decode_rle, encode_rle,
                    image_iou_score, iou)
from .rng import generator

N_SIZE_BINS = 4
N_CLUTTER_BINS = 3
_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class WorldConfig:
    num_images: int = 1000
    height: int = 64
    width: int = 64
    num_classes: int = 20
    mean_objects: float = 2.8
    max_objects: int = 12
    mean_classes: float = 1.5
    min_area_fraction: float = 0.002
    max_area_fraction: float = 0.25
    boundary_jitter: float = 0.15
    seed: int = 0
    # fixes the object count of every image when set
    forced_objects: int | None = None

    def __post_init__(self):
        if min(self.num_images, self.height, self.width, self.num_classes, self.max_objects) <= 0:
            raise ValueError("world counts and raster size must be positive")
        if self.mean_objects < 1 or self.mean_classes < 1:
            raise ValueError("mean objects and mean classes per image must be at least 1")
        if not 0 < self.min_area_fraction <= self.max_area_fraction <= 1:
            raise ValueError("area fractions must satisfy 0 < min <= max <= 1")
        if self.forced_objects is not None and self.forced_objects < 1:
            raise ValueError("forced_objects must be at least 1")

    def size_bin_edges(self) -> tuple[float, ...]:
        """Interior quartile edges of the log-uniform object-size distribution."""
        lo, hi = math.log(self.min_area_fraction), math.log(self.max_area_fraction)
        return tuple(math.exp(lo + k * (hi - lo) / N_SIZE_BINS) for k in range(1, N_SIZE_BINS))

    @classmethod
    def from_dict(cls, d: Mapping) -> "WorldConfig":
        return cls(**d)


@dataclass(frozen=True)
class ImageStats:
    n_objects: int
    mean_area_fraction: float
    area_fractions: tuple[float, ...]


@dataclass(frozen=True)
class SyntheticImage:
    image_id: int
    height: int
    width: int
    instances: tuple[InstanceAnnotation, ...]

    @property
    def stats(self) -> ImageStats:
        total = self.height * self.width
        fractions = tuple(inst.mask.area / total for inst in self.instances)
        return ImageStats(len(fractions), sum(fractions) / len(fractions), fractions)


@dataclass
class SyntheticDataset:
    images: list[SyntheticImage]
    world: WorldConfig | None = None
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._index = {img.image_id: img for img in self.images}
        if len(self._index) != len(self.images):
            raise ValueError("image ids must be unique")

    def __len__(self):
        return len(self.images)

    def __getitem__(self, image_id) -> SyntheticImage:
        return self._index[image_id]

    @property
    def ids(self) -> list[int]:
        return [img.image_id for img in self.images]

    def subset(self, ids: Iterable) -> "SyntheticDataset":
        return SyntheticDataset([self._index[i] for i in sorted(ids)], self.world)

    def truths(self) -> dict:
        return {img.image_id: list(img.instances) for img in self.images}

    def to_json(self) -> str:
        payload = {
            "world": None if self.world is None else asdict(self.world),
            "images": [
                {
                    "image_id": img.image_id,
                    "height": img.height,
                    "width": img.width,
                    "instances": [
                        {"class_id": inst.class_id, "mask": inst.mask.to_dict()}
                        for inst in img.instances
                    ],
                }
                for img in self.images
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SyntheticDataset":
        payload = json.loads(text)
        world = None if payload.get("world") is None else WorldConfig.from_dict(payload["world"])
        images = [
            SyntheticImage(
                int(d["image_id"]), int(d["height"]), int(d["width"]),
                tuple(InstanceAnnotation(int(i["class_id"]), BinaryMask.from_dict(i["mask"]))
                      for i in d["instances"]))
            for d in payload["images"]
        ]
        return cls(images, world)

    def stats_csv(self) -> str:
        lines = ["image_id,n_objects,mean_area_fraction"]
        for img in self.images:
            s = img.stats
            lines.append(f"{img.image_id},{s.n_objects},{s.mean_area_fraction:.6f}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# scene generation

def _sample_object_count(rng: np.random.Generator, config: WorldConfig) -> int:
    if config.forced_objects is not None:
        return config.forced_objects
    while True:
        k = 1 + int(rng.poisson(config.mean_objects - 1))
        if k <= config.max_objects:
            return k


def _sample_classes(rng: np.random.Generator, n: int, config: WorldConfig) -> list[int]:
    # an object repeats an earlier class with probability `repeat`, which puts
    # the expected number of distinct classes near mean_classes
    extra = config.mean_objects - 1
    repeat = 0.0 if extra <= 0 else min(1.0, max(0.0, 1 - (config.mean_classes - 1) / extra))
    classes = [int(rng.integers(config.num_classes))]
    for _ in range(n - 1):
        if rng.random() < repeat:
            classes.append(classes[int(rng.integers(len(classes)))])
        else:
            classes.append(int(rng.integers(config.num_classes)))
    return classes


def _render_shape(rng: np.random.Generator, config: WorldConfig) -> np.ndarray:
    h, w = config.height, config.width
    lo, hi = math.log(config.min_area_fraction), math.log(config.max_area_fraction)
    area = math.exp(rng.uniform(lo, hi)) * h * w
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    ellipse = rng.random() < 0.5
    if ellipse:
        ry, rx = math.sqrt(area * aspect / math.pi), math.sqrt(area / (aspect * math.pi))
    else:
        ry, rx = math.sqrt(area * aspect) / 2, math.sqrt(area / aspect) / 2
    ry, rx = min(ry, (h - 1) / 2), min(rx, (w - 1) / 2)
    cy = rng.uniform(ry, h - 1 - ry)
    cx = rng.uniform(rx, w - 1 - rx)
    yy, xx = np.mgrid[0:h, 0:w]
    dy = (yy - cy) / max(ry, 0.5)
    dx = (xx - cx) / max(rx, 0.5)
    jitter = config.boundary_jitter * rng.uniform(-1.0, 1.0, size=(h, w))
    if ellipse:
        raster = dy * dy + dx * dx <= 1.0 + jitter
    else:
        raster = np.maximum(np.abs(dy), np.abs(dx)) <= 1.0 + jitter
    raster[int(round(cy)), int(round(cx))] = True
    return raster


def generate_dataset(config: WorldConfig, id_offset: int = 0) -> SyntheticDataset:
    """Deterministic synthetic dataset; image ``k`` depends only on (seed, id)."""
    min_pixels = config.min_area_fraction * config.height * config.width
    if min_pixels < 4 or min(config.height, config.width) < 8:
        raise ValueError(
            f"raster {config.height}x{config.width} is too small for objects of "
            f"area fraction {config.min_area_fraction}")
    images = []
    for k in range(config.num_images):
        image_id = id_offset + k
        rng = generator(config.seed, "image", image_id)
        n = _sample_object_count(rng, config)
        classes = _sample_classes(rng, n, config)
        instances = tuple(
            InstanceAnnotation(c, encode_rle(_render_shape(rng, config))) for c in classes)
        images.append(SyntheticImage(image_id, config.height, config.width, instances))
    return SyntheticDataset(images, config)


# --------------------------------------------------------------------------
# surrogate segmenter

def size_bin(area_fraction: float, edges: Sequence[float]) -> int:
    return int(np.searchsorted(edges, area_fraction, side="right"))


def clutter_bin(n_objects: int) -> int:
    if n_objects <= 1:
        return 0
    if n_objects <= 3:
        return 1
    return 2


@dataclass(frozen=True)
class SegmenterParams:
    s_min: float = 0.15
    s_max: float = 0.95
    tau: float = 8.0
    # standard deviation, in pixels, of boundary shift and translation at skill 0
    scale: float = 4.0
    p_miss: float = 0.15
    confidence_jitter: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.s_min <= self.s_max <= 1.0:
            raise ValueError("skills must satisfy 0 <= s_min <= s_max <= 1")
        if self.tau <= 0 or self.scale < 0 or not 0 <= self.p_miss <= 1:
            raise ValueError("invalid segmenter parameters")


@dataclass(frozen=True)
class SurrogateSegmenter:
    """Skill table over (size bin, clutter bin) plus the noise seed."""

    counts: np.ndarray
    size_edges: tuple[float, ...]
    params: SegmenterParams = SegmenterParams()
    noise_seed: int = 0

    @property
    def skills(self) -> np.ndarray:
        p = self.params
        return p.s_min + (p.s_max - p.s_min) * (1.0 - np.exp(-self.counts / p.tau))

    def skill(self, area_fraction: float, n_objects: int) -> float:
        return float(self.skills[size_bin(area_fraction, self.size_edges), clutter_bin(n_objects)])


def bin_counts(entries: Iterable[tuple[float, int, float]], size_edges: Sequence[float]) -> np.ndarray:
    """Weighted instance counts per bin from ``(area_fraction, n_objects, weight)``."""
    counts = np.zeros((N_SIZE_BINS, N_CLUTTER_BINS))
    for fraction, n_objects, weight in entries:
        counts[size_bin(fraction, size_edges), clutter_bin(n_objects)] += weight
    return counts


def strong_entries(images: Iterable[SyntheticImage]) -> list[tuple[float, int, float]]:
    out = []
    for img in images:
        for fraction in img.stats.area_fractions:
            out.append((fraction, len(img.instances), 1.0))
    return out


def train_surrogate(strong_set: SyntheticDataset | Sequence[SyntheticImage],
                    size_edges: Sequence[float] | None = None,
                    params: SegmenterParams = SegmenterParams(),
                    noise_seed: int = 0,
                    extra_counts: np.ndarray | None = None) -> SurrogateSegmenter:
    images = list(strong_set.images if isinstance(strong_set, SyntheticDataset) else strong_set)
    if not images and extra_counts is None:
        raise ValueError("cannot train on an empty set")
    if size_edges is None:
        world = strong_set.world if isinstance(strong_set, SyntheticDataset) else None
        size_edges = (world or WorldConfig()).size_bin_edges()
    counts = bin_counts(strong_entries(images), size_edges)
    if extra_counts is not None:
        counts = counts + extra_counts
    return SurrogateSegmenter(counts, tuple(size_edges), params, noise_seed)


def perturb_mask(raster: np.ndarray, dy: int, dx: int, depth: int) -> np.ndarray:
    """Translate by (dy, dx) with zero fill, then dilate (depth > 0) or erode."""
    h, w = raster.shape
    out = np.zeros_like(raster)
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    if abs(dy) < h and abs(dx) < w:
        out[yd, xd] = raster[ys, xs]
    if depth > 0:
        out = ndimage.binary_dilation(out, _CROSS, iterations=depth)
    elif depth < 0:
        out = ndimage.binary_erosion(out, _CROSS, iterations=-depth, border_value=0)
    return out


def segment(model: SurrogateSegmenter, image: SyntheticImage) -> list[InstancePrediction]:
    """Predicted instances for one image, each tagged with its source instance."""
    p = model.params
    rng = generator(model.noise_seed, "segment", image.image_id)
    n = len(image.instances)
    total = image.height * image.width
    preds = []
    for idx, inst in enumerate(image.instances):
        # fixed number of draws per instance keeps the stream aligned
        u_drop = rng.random()
        z = rng.standard_normal(4)
        skill = model.skill(inst.mask.area / total, n)
        if u_drop < (1.0 - skill) * p.p_miss:
            continue
        sigma = (1.0 - skill) * p.scale
        dy, dx, depth = (int(round(v)) for v in sigma * z[:3])
        if dy == dx == depth == 0:
            mask = inst.mask
        else:
            raster = perturb_mask(decode_rle(inst.mask), dy, dx, depth)
            if not raster.any():
                continue
            mask = encode_rle(raster)
        confidence = min(1.0, max(0.0, skill + p.confidence_jitter * float(z[3])))
        preds.append(InstancePrediction(inst.class_id, mask, confidence, source_index=idx))
    return preds


def segment_dataset(model: SurrogateSegmenter, dataset: SyntheticDataset | Iterable[SyntheticImage]) -> dict:
    images = dataset.images if isinstance(dataset, SyntheticDataset) else dataset
    return {img.image_id: segment(model, img) for img in images}


def achieved_ious(predictions: Sequence[InstancePrediction], image: SyntheticImage) -> list[float]:
    return [iou(pred.mask, image.instances[pred.source_index].mask) for pred in predictions]


def oracle_scores(predictions: Mapping, truths: SyntheticDataset | Mapping) -> dict:
    """Ground-truth IoU Score per image; images with no prediction score 0."""
    if isinstance(truths, SyntheticDataset):
        truth_map = {img.image_id: list(img.instances) for img in truths.images}
    else:
        truth_map = truths
    if set(predictions) != set(truth_map):
        raise ValueError("predictions and truths must cover the same images")
    scores = {}
    for image_id in sorted(truth_map):
        preds = predictions[image_id]
        if not preds:
            scores[image_id] = 0.0
            continue
        instances = truth_map[image_id]
        scores[image_id] = image_iou_score(
            [iou(p.mask, instances[p.source_index].mask) for p in preds])
    return scores


def with_params(model: SurrogateSegmenter, **changes) -> SurrogateSegmenter:
    return replace(model, params=replace(model.params, **changes))
