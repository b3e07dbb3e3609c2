"""Annotation-cost model and campaign budgets.

Per-image costs are held as integer centiseconds so campaign totals are
exact; conversion to days happens only for presentation.
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from enum import Enum

SECONDS_PER_DAY = 86_400


class Supervision(str, Enum):
    IL = "IL"
    ILC = "IL+C"
    FULL = "Full"
    BB = "BB"


class Strategy(str, Enum):
    RANDOM = "random"
    MASK_GUIDED = "mask_guided"


def _to_centiseconds(seconds) -> int:
    cs = Decimal(str(seconds)) * 100
    if cs != cs.to_integral_value():
        raise ValueError(f"cost {seconds} s is not a whole number of centiseconds")
    return int(cs)


@dataclass(frozen=True)
class BudgetModel:
    """Seconds per image for each supervision level."""

    t_il: float = 20.0
    t_ilc: float = 22.22
    t_full: float = 239.7
    t_bb: float = 38.1

    def __post_init__(self):
        for name in ("t_il", "t_ilc", "t_full", "t_bb"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def centiseconds(self, supervision: Supervision | str) -> int:
        sup = Supervision(supervision)
        value = {
            Supervision.IL: self.t_il,
            Supervision.ILC: self.t_ilc,
            Supervision.FULL: self.t_full,
            Supervision.BB: self.t_bb,
        }[sup]
        return _to_centiseconds(value)


@dataclass(frozen=True)
class CampaignPlan:
    n_strong: int
    selection_pool: int = 0
    n_weak: int = 0

    def __post_init__(self):
        if min(self.n_strong, self.selection_pool, self.n_weak) < 0:
            raise ValueError("campaign counts must be non-negative")

    def __add__(self, other: "CampaignPlan") -> "CampaignPlan":
        return CampaignPlan(self.n_strong + other.n_strong,
                            self.selection_pool + other.selection_pool,
                            self.n_weak + other.n_weak)


def cost_per_image(model: BudgetModel, supervision: Supervision | str) -> float:
    return model.centiseconds(supervision) / 100


def campaign_centiseconds(model: BudgetModel, plan: CampaignPlan, strategy: Strategy | str) -> int:
    strategy = Strategy(strategy)
    full = model.centiseconds(Supervision.FULL)
    ilc = model.centiseconds(Supervision.ILC)
    total = plan.n_strong * full + plan.n_weak * ilc
    if strategy is Strategy.MASK_GUIDED:
        if plan.selection_pool < plan.n_strong:
            raise ValueError(
                f"selection pool ({plan.selection_pool}) is smaller than the strong set ({plan.n_strong})")
        # every pool image not strongly annotated still needs IL+C labels to be scored
        total += (plan.selection_pool - plan.n_strong) * ilc
    return total


def campaign_cost(model: BudgetModel, plan: CampaignPlan, strategy: Strategy | str) -> float:
    """Total annotation time of a campaign in seconds."""
    return campaign_centiseconds(model, plan, strategy) / 100


def seconds_to_days(seconds: float) -> float:
    if seconds < 0:
        raise ValueError("seconds must be non-negative")
    return seconds / SECONDS_PER_DAY
