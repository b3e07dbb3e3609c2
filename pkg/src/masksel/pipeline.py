"""Two-stage semi-supervised harness with one round of sample selection.

Per run seed:

1. annotate ``n_initial`` random pool images strongly and train the
   annotation model (surrogate segmenter plus IoU regressor);
2. score the rest of the pool with oracle or predicted IoU Scores;
3. select ``n_total - n_initial`` more images (beta-proximity or random);
4. retrain the annotation model on all strong images;
5. pseudo-annotate the weak set and train the segmentation model on
   strong plus quality-weighted pseudo labels;
6. report test AP of both models, regressor MAE and the campaign budget.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from . import budget as budget_mod
from .metrics import mae_iou, mean_ap
from .regressor import (RegressorModel, TrainingSchedule, extract_features,
                        image_context, predict_iou, train)
from .rng import derive_seed
from .selection import select_by_beta, select_random
from .simulator import (SegmenterParams, SurrogateSegmenter, SyntheticDataset, WorldConfig,
                        achieved_ious, bin_counts, generate_dataset, oracle_scores, segment,
                        segment_dataset, train_surrogate)

THREADS_ENV = "MASKSEL_THREADS"
# count scales at which the segmenter is sampled while the IoU head trains jointly
JOINT_PROGRESS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = WorldConfig()
    pool_size: int = 1464
    weak_size: int = 1464
    test_size: int = 500
    n_initial: int = 100
    n_total: int = 200
    strategy: str = "beta_proximity"
    beta: float = 0.5
    score_source: str = "oracle"
    weak_fraction: float = 1.0
    num_seeds: int = 5
    schedule: TrainingSchedule = TrainingSchedule()
    target_transform: str = "sqrt"
    segmenter: SegmenterParams = SegmenterParams()
    iou_threshold: float = 0.5
    budget: budget_mod.BudgetModel = budget_mod.BudgetModel()

    def __post_init__(self):
        if not 1 <= self.n_initial <= self.n_total <= self.pool_size:
            raise ValueError("need 1 <= n_initial <= n_total <= pool_size")
        if not 0.0 <= self.weak_fraction <= 1.0:
            raise ValueError("weak_fraction must lie in [0, 1]")
        if self.strategy not in ("random", "beta_proximity"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.score_source not in ("oracle", "predicted"):
            raise ValueError(f"unknown score source {self.score_source!r}")
        if self.num_seeds < 1 or self.test_size < 1:
            raise ValueError("num_seeds and test_size must be positive")

    @property
    def n_prime(self) -> int:
        return self.n_total - self.n_initial

    @property
    def n_weak(self) -> int:
        return int(round(self.weak_fraction * self.weak_size))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = dict(d)
        nested = {"world": WorldConfig, "schedule": TrainingSchedule,
                  "segmenter": SegmenterParams, "budget": budget_mod.BudgetModel}
        for key, typ in nested.items():
            if key in d:
                d[key] = typ(**d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Splits:
    pool: SyntheticDataset
    weak: SyntheticDataset
    test: SyntheticDataset


@functools.lru_cache(maxsize=4)
def make_splits(world: WorldConfig, pool_size: int, weak_size: int, test_size: int) -> Splits:
    """Pool, weak and test images drawn from one world with disjoint id ranges."""
    pool = generate_dataset(replace(world, num_images=pool_size), id_offset=0)
    weak = generate_dataset(replace(world, num_images=max(weak_size, 1)), id_offset=pool_size)
    if weak_size == 0:
        weak = SyntheticDataset([], world)
    test = generate_dataset(replace(world, num_images=test_size), id_offset=pool_size + weak_size)
    return Splits(pool, weak, test)


def splits_for(config: ExperimentConfig) -> Splits:
    return make_splits(config.world, config.pool_size, config.weak_size, config.test_size)


# --------------------------------------------------------------------------
# stages

def regressor_samples(model: SurrogateSegmenter, images: SyntheticDataset) -> list:
    samples = []
    for img in images.images:
        preds = segment(model, img)
        ctx = image_context(img.height, img.width, len(img.instances), preds)
        for pred, value in zip(preds, achieved_ious(preds, img)):
            samples.append((extract_features(ctx, pred), value))
    return samples


def run_annotation_stage(config: ExperimentConfig, strong: SyntheticDataset, seed: int
                         ) -> tuple[SurrogateSegmenter, RegressorModel]:
    """Train the annotation segmenter on the strong set, then its IoU regressor."""
    if len(strong) == 0:
        raise ValueError("the strong set is empty")
    edges = config.world.size_bin_edges()
    f_theta = train_surrogate(strong, edges, config.segmenter, derive_seed(seed, "segmenter"))
    schedule = replace(config.schedule, seed=derive_seed(seed, "regressor"))
    sample_seed = derive_seed(seed, "iou_samples")
    if schedule.phase == "frozen_then_iou":
        samples = regressor_samples(replace(f_theta, noise_seed=sample_seed), strong)
    else:
        # the head also sees outputs of the still-converging segmenter
        samples = []
        for progress in JOINT_PROGRESS:
            partial = replace(f_theta, counts=f_theta.counts * progress,
                              noise_seed=derive_seed(sample_seed, progress))
            samples.extend(regressor_samples(partial, strong))
    regressor = train(samples, schedule, config.target_transform)
    return f_theta, regressor


def predicted_scores(regressor: RegressorModel, images: SyntheticDataset, predictions: Mapping
                     ) -> tuple[dict, dict]:
    """Per-image predicted IoU Score and predictions annotated with their predicted IoU."""
    scores, annotated = {}, {}
    for img in images.images:
        preds = predictions[img.image_id]
        ctx = image_context(img.height, img.width, len(img.instances), preds)
        out = [replace(p, predicted_iou=predict_iou(regressor, extract_features(ctx, p)))
               for p in preds]
        annotated[img.image_id] = out
        scores[img.image_id] = (sum(p.predicted_iou for p in out) / len(out)) if out else 0.0
    return scores, annotated


def pseudo_annotate(f_theta: SurrogateSegmenter, regressor: RegressorModel, pool: SyntheticDataset,
                    score_source: str, strong_ids: Sequence = ()) -> tuple[dict, dict]:
    """Pseudo labels for ``pool`` and the IoU Score of each of its images."""
    overlap = set(pool.ids) & set(strong_ids)
    if overlap:
        raise ValueError(f"pool overlaps the strong set on {len(overlap)} images")
    raw = segment_dataset(f_theta, pool)
    if score_source == "oracle":
        return raw, oracle_scores(raw, pool)
    if score_source == "predicted":
        predicted, annotated = predicted_scores(regressor, pool, raw)
        return annotated, predicted
    raise ValueError(f"unknown score source {score_source!r}")


def pseudo_counts(pool: SyntheticDataset, pseudo_labels: Mapping, weights: Mapping,
                  size_edges) -> np.ndarray:
    entries = []
    for img in pool.images:
        total = img.height * img.width
        for pred in pseudo_labels[img.image_id]:
            entries.append((pred.mask.area / total, len(img.instances), weights[img.image_id]))
    return bin_counts(entries, size_edges)


def run_segmentation_stage(strong: SyntheticDataset, pseudo_pool: SyntheticDataset,
                           pseudo_labels: Mapping, weights: Mapping, params: SegmenterParams,
                           size_edges, noise_seed: int) -> SurrogateSegmenter:
    """Segmentation model trained on strong labels plus score-weighted pseudo labels."""
    if set(strong.ids) & set(pseudo_pool.ids):
        raise ValueError("strong and pseudo sets must be disjoint")
    if len(strong) == 0 and len(pseudo_pool) == 0:
        raise ValueError("nothing to train on")
    extra = pseudo_counts(pseudo_pool, pseudo_labels, weights, size_edges)
    return train_surrogate(strong.images, size_edges, params, noise_seed, extra_counts=extra)


# --------------------------------------------------------------------------
# experiment

@dataclass(frozen=True)
class ScoredPoolResult:
    bootstrap: tuple
    candidates: tuple
    oracle: dict
    predicted: dict
    mae_pp: float


@functools.lru_cache(maxsize=64)
def _scored_pool(config: ExperimentConfig, run_seed: int) -> ScoredPoolResult:
    # depends only on the fields that shape the first stage, so it is shared across a sweep
    splits = splits_for(config)
    boot = select_random(splits.pool.ids, config.n_initial, derive_seed(run_seed, "bootstrap"))
    f0, reg0 = run_annotation_stage(config, splits.pool.subset(boot), derive_seed(run_seed, "stage0"))
    candidates = splits.pool.subset(sorted(set(splits.pool.ids) - set(boot)))
    if len(candidates) == 0:
        return ScoredPoolResult(tuple(boot), (), {}, {}, 0.0)
    raw = segment_dataset(f0, candidates)
    oracle = oracle_scores(raw, candidates)
    predicted, _ = predicted_scores(reg0, candidates, raw)
    return ScoredPoolResult(tuple(boot), tuple(candidates.ids), oracle, predicted,
                            mae_iou(predicted, oracle))


def _stage0_key(config: ExperimentConfig) -> ExperimentConfig:
    return replace(config, n_total=config.n_initial, strategy="random", beta=0.0,
                   score_source="oracle", weak_fraction=0.0, num_seeds=1)


def scored_pool(config: ExperimentConfig, run_seed: int) -> ScoredPoolResult:
    return _scored_pool(_stage0_key(config), run_seed)


def select_new(config: ExperimentConfig, pool: ScoredPoolResult, run_seed: int,
               score_source: str | None = None) -> list:
    if config.n_prime == 0:
        return []
    if config.strategy == "random":
        return select_random(list(pool.candidates), config.n_prime, derive_seed(run_seed, "select"))
    source = score_source or config.score_source
    scores = pool.oracle if source == "oracle" else pool.predicted
    return select_by_beta(scores, config.beta, config.n_prime)


def realized_plan(config: ExperimentConfig) -> budget_mod.CampaignPlan:
    pool = config.pool_size if config.strategy == "beta_proximity" else 0
    return budget_mod.CampaignPlan(config.n_total, pool, config.n_weak)


def budget_strategy(config: ExperimentConfig) -> str:
    return "mask_guided" if config.strategy == "beta_proximity" else "random"


@dataclass
class SeedResult:
    seed: int
    ap_annotation: float
    ap_segmentation: float
    mae_pp: float
    budget_seconds: float
    selected: list
    strong_ids: list

    @property
    def budget_days(self) -> float:
        return budget_mod.seconds_to_days(self.budget_seconds)


def run_seed(config: ExperimentConfig, global_seed: int, k: int) -> SeedResult:
    splits = splits_for(config)
    rs = derive_seed(global_seed, "run", k)
    pool = scored_pool(config, rs)
    selected = select_new(config, pool, rs)
    strong_ids = sorted(set(pool.bootstrap) | set(selected))
    strong = splits.pool.subset(strong_ids)
    f_theta, regressor = run_annotation_stage(config, strong, derive_seed(rs, "annotation"))

    truths = splits.test.truths()
    ap_annotation = mean_ap(segment_dataset(f_theta, splits.test), truths, config.iou_threshold).mean_ap

    weak_ids = select_random(splits.weak.ids, config.n_weak, derive_seed(rs, "weak")) \
        if config.n_weak > 0 else []
    weak = splits.weak.subset(weak_ids)
    labels, weights = pseudo_annotate(f_theta, regressor, weak, config.score_source, strong_ids)
    g_phi = run_segmentation_stage(strong, weak, labels, weights, config.segmenter,
                                   config.world.size_bin_edges(), derive_seed(rs, "segmentation"))
    ap_segmentation = mean_ap(segment_dataset(g_phi, splits.test), truths, config.iou_threshold).mean_ap

    seconds = budget_mod.campaign_cost(config.budget, realized_plan(config), budget_strategy(config))
    return SeedResult(k, ap_annotation, ap_segmentation, pool.mae_pp, seconds, list(selected), strong_ids)


REPORT_COLUMNS = ("seed", "stage", "n_total", "beta", "score_source", "ap_annotation",
                  "ap_segmentation", "mae_pp", "budget_days")
METRIC_COLUMNS = ("ap_annotation", "ap_segmentation", "mae_pp", "budget_days")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    seeds: list[SeedResult]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.seeds])

    def mean(self, name: str) -> float:
        return float(np.mean(self.column(name)))

    def std(self, name: str) -> float:
        return float(np.std(self.column(name)))

    @property
    def beta_label(self) -> str:
        return f"{self.config.beta:.2f}" if self.config.strategy == "beta_proximity" else ""

    @property
    def source_label(self) -> str:
        return self.config.score_source if self.config.strategy == "beta_proximity" else "random"

    def rows(self) -> list[list[str]]:
        c = self.config
        out = []
        for s in self.seeds:
            out.append([str(s.seed), "seed", str(c.n_total), self.beta_label, self.source_label]
                       + [f"{getattr(s, m):.6f}" for m in METRIC_COLUMNS])
        for stage, fn in (("mean", self.mean), ("std", self.std)):
            out.append(["", stage, str(c.n_total), self.beta_label, self.source_label]
                       + [f"{fn(m):.6f}" for m in METRIC_COLUMNS])
        return out


def parallel_map(fn, items: Sequence, threads: int | None = None) -> list:
    """Ordered map; results never depend on the thread count."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_experiment(config: ExperimentConfig, seed: int = 0, threads: int | None = None) -> ExperimentReport:
    results = parallel_map(lambda k: run_seed(config, seed, k), list(range(config.num_seeds)), threads)
    return ExperimentReport(config, results)


def report_csv(reports: Sequence[ExperimentReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for report in reports:
        writer.writerows(report.rows())
    return buf.getvalue()


# --------------------------------------------------------------------------
# selection analysis

@dataclass(frozen=True)
class AnalysisRow:
    label: str
    n_selected: int
    mean_objects: float
    mean_area_fraction: float


def analyze_selection(dataset: SyntheticDataset, selections: Mapping[str, Sequence]) -> list[AnalysisRow]:
    """Mean object count and mean object size of each selected image set."""
    rows = []
    for label, ids in selections.items():
        if len(ids) == 0:
            raise ValueError(f"selection {label!r} is empty")
        per_image = [dataset[i].stats for i in ids]
        rows.append(AnalysisRow(
            str(label), len(ids),
            sum(s.n_objects for s in per_image) / len(ids),
            sum(s.mean_area_fraction for s in per_image) / len(ids)))
    return rows


ANALYSIS_COLUMNS = ("seed", "beta", "n_selected", "mean_objects", "mean_area_fraction")


def analysis_csv(entries: Sequence[tuple[str, AnalysisRow]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ANALYSIS_COLUMNS)
    for seed_label, row in entries:
        writer.writerow([seed_label, row.label, row.n_selected,
                         f"{row.mean_objects:.6f}", f"{row.mean_area_fraction:.6f}"])
    return buf.getvalue()


def report_analysis(report: ExperimentReport) -> list[tuple[str, AnalysisRow]]:
    splits = splits_for(report.config)
    label = report.beta_label or "random"
    out = []
    for s in report.seeds:
        if s.selected:
            out.append((str(s.seed), analyze_selection(splits.pool, {label: s.selected})[0]))
    return out


# --------------------------------------------------------------------------
# sweeps and overlap

def beta_grid(grid: str = "0.0:1.0:0.1") -> list[float]:
    """Inclusive grid from ``start:stop:step``."""
    start, stop, step = (float(v) for v in grid.split(":"))
    if step <= 0:
        raise ValueError("grid step must be positive")
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


def run_sweep(config: ExperimentConfig, betas: Sequence[float], seed: int = 0,
              include_random: bool = True, threads: int | None = None) -> list[ExperimentReport]:
    configs = [replace(config, strategy="random")] if include_random else []
    configs += [replace(config, strategy="beta_proximity", beta=b) for b in betas]
    return [run_experiment(c, seed, threads) for c in configs]


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def chance_jaccard(pool_size: int, n: int) -> float:
    """Expected Jaccard index of two independent uniform ``n``-subsets of a pool."""
    if n == 0:
        return 1.0
    k = np.arange(max(0, 2 * n - pool_size), n + 1)
    pmf = sps.hypergeom(pool_size, n, n).pmf(k)
    return float(np.sum(pmf * k / (2 * n - k)))


def selection_overlap(config: ExperimentConfig, seed: int = 0) -> list[float]:
    """Per run seed, Jaccard overlap of oracle- and predicted-score selections."""
    out = []
    for k in range(config.num_seeds):
        rs = derive_seed(seed, "run", k)
        pool = scored_pool(config, rs)
        out.append(jaccard(select_new(config, pool, rs, "oracle"),
                           select_new(config, pool, rs, "predicted")))
    return out


def default_config() -> ExperimentConfig:
    """The declared synthetic world the trend checks run in."""
    from importlib.resources import files
    text = files("masksel").joinpath("configs/default.json").read_text()
    return ExperimentConfig.from_dict(json.loads(text))
