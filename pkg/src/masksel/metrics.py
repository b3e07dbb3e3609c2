"""Greedy instance matching, mean Average Precision and IoU-Score MAE."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

from .masks import InstanceAnnotation, InstancePrediction, MaskDimensionError, iou


@dataclass
class MatchResult:
    image_id: object
    is_tp: list[bool]
    matched_gt: list[int | None]
    # IoU achieved by each prediction with its matched ground truth (0.0 if unmatched)
    achieved_iou: list[float]


@dataclass
class MetricReport:
    ap: dict[int, float]
    mean_ap: float
    mae_iou: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class_id", "ap"])
        for cls in sorted(self.ap):
            writer.writerow([cls, f"{self.ap[cls]:.6f}"])
        writer.writerow(["mean_ap", f"{self.mean_ap:.6f}"])
        writer.writerow(["mae_iou", "" if self.mae_iou is None else f"{self.mae_iou:.6f}"])
        return buf.getvalue()


def confidence_order(predictions: Sequence[InstancePrediction]) -> list[int]:
    """Indices by descending confidence; ties keep input order."""
    return sorted(range(len(predictions)), key=lambda i: -predictions[i].confidence)


def match_instances(predictions: Sequence[InstancePrediction],
                    truths: Sequence[InstanceAnnotation],
                    iou_threshold: float = 0.5,
                    image_id=None) -> MatchResult:
    """Greedily match one image's predictions to its ground truth.

    Each prediction, in descending confidence, takes the unmatched
    same-class ground truth with the highest IoU (lowest index on ties)
    provided that IoU reaches ``iou_threshold``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    shapes = {p.mask.shape for p in predictions} | {t.mask.shape for t in truths}
    if len(shapes) > 1:
        raise MaskDimensionError(f"masks of one image must share dimensions, got {sorted(shapes)}")

    n = len(predictions)
    is_tp = [False] * n
    matched: list[int | None] = [None] * n
    achieved = [0.0] * n
    taken = [False] * len(truths)
    for i in confidence_order(predictions):
        pred = predictions[i]
        best, best_iou = None, -1.0
        for j, gt in enumerate(truths):
            if taken[j] or gt.class_id != pred.class_id:
                continue
            v = iou(pred.mask, gt.mask)
            if v > best_iou:
                best, best_iou = j, v
        if best is not None and best_iou >= iou_threshold:
            taken[best] = True
            is_tp[i] = True
            matched[i] = best
            achieved[i] = best_iou
    return MatchResult(image_id, is_tp, matched, achieved)


def average_precision(tp_flags: Sequence[bool], n_truth: int) -> float:
    """All-points interpolated AP for detections already ranked best-first."""
    if n_truth <= 0:
        raise ValueError("AP is undefined without ground-truth instances")
    precisions = []
    recalls = []
    tp = 0
    for k, flag in enumerate(tp_flags, start=1):
        tp += bool(flag)
        precisions.append(tp / k)
        recalls.append(tp / n_truth)
    # monotone envelope, right to left
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    ap = 0.0
    prev_recall = 0.0
    for p, r in zip(precisions, recalls):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def mean_ap(dataset_predictions: Mapping[object, Sequence[InstancePrediction]],
            dataset_truths: Mapping[object, Sequence[InstanceAnnotation]],
            iou_threshold: float = 0.5) -> MetricReport:
    """Mean over classes of the all-points AP at one IoU threshold.

    Only classes with at least one ground-truth instance enter the mean.
    Detections are ranked globally by (confidence desc, image id, input index).
    """
    if set(dataset_predictions) != set(dataset_truths):
        raise ValueError("predictions and truths must cover the same image ids")
    n_truth: dict[int, int] = {}
    for truths in dataset_truths.values():
        for t in truths:
            n_truth[t.class_id] = n_truth.get(t.class_id, 0) + 1
    if not n_truth:
        raise ValueError("no ground-truth instances in the dataset")

    ranked: dict[int, list[tuple]] = {}
    for image_id in sorted(dataset_truths):
        preds = dataset_predictions[image_id]
        result = match_instances(preds, dataset_truths[image_id], iou_threshold, image_id)
        for idx, pred in enumerate(preds):
            ranked.setdefault(pred.class_id, []).append(
                (-pred.confidence, image_id, idx, result.is_tp[idx]))

    ap = {}
    for cls in sorted(n_truth):
        entries = sorted(ranked.get(cls, []), key=lambda e: e[:3])
        ap[cls] = average_precision([e[3] for e in entries], n_truth[cls])
    return MetricReport(ap=ap, mean_ap=sum(ap.values()) / len(ap))


def mae_iou(predicted_scores: Mapping[object, float], true_scores: Mapping[object, float]) -> float:
    """Mean absolute error of per-image IoU Scores, in percentage points."""
    if set(predicted_scores) != set(true_scores):
        raise ValueError("predicted and true scores must share image ids")
    if not true_scores:
        raise ValueError("no scores to compare")
    keys = sorted(true_scores)
    total = sum(abs(predicted_scores[k] - true_scores[k]) for k in keys)
    return 100.0 * total / len(keys)
