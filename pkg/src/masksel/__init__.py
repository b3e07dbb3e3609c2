"""Mask-guided sample selection for semi-supervised instance segmentation."""
from .budget import BudgetModel, CampaignPlan, campaign_cost, cost_per_image, seconds_to_days
from .masks import (BinaryMask, InstanceAnnotation, InstancePrediction, decode_rle, encode_rle,
                    image_iou_score, iou)
from .metrics import MetricReport, mae_iou, match_instances, mean_ap
from .selection import SelectionConfig, distance_ranking, select_by_beta, select_random

__version__ = "0.1.0"

__all__ = [
    "BinaryMask", "BudgetModel", "CampaignPlan", "InstanceAnnotation", "InstancePrediction", "MetricReport",
    "SelectionConfig", "campaign_cost", "cost_per_image", "decode_rle", "distance_ranking", "encode_rle",
    "image_iou_score", "iou", "mae_iou", "match_instances", "mean_ap", "seconds_to_days", "select_by_beta",
    "select_random",
]
