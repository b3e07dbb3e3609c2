"""Choosing which pool images to annotate strongly.

``select_by_beta`` keeps the images whose IoU Score is closest to a target
value; ``select_random`` is the uniform baseline.  Both are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .rng import generator


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "beta_proximity"
    beta: float = 0.5
    n_prime: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("random", "beta_proximity"):
            raise ValueError(f"unknown selection strategy {self.strategy!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.n_prime < 1:
            raise ValueError("n_prime must be at least 1")


def _check_pool(pool: Mapping) -> None:
    if not pool:
        raise ValueError("cannot select from an empty pool")
    for image_id, score in pool.items():
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score of image {image_id!r} outside [0, 1]: {score}")


def distance_ranking(pool: Mapping[object, float], beta: float) -> list[tuple[object, float]]:
    """All pool entries as ``(image_id, |score - beta|)``, closest first, ties by id."""
    _check_pool(pool)
    ranked = [(image_id, abs(score - beta)) for image_id, score in pool.items()]
    ranked.sort(key=lambda e: (e[1], e[0]))
    return ranked


def select_by_beta(pool: Mapping[object, float], beta: float, n_prime: int) -> list:
    return [image_id for image_id, _ in distance_ranking(pool, beta)[:n_prime]]


def select_random(pool_ids: Sequence, n_prime: int, seed: int) -> list:
    """Uniform sample without replacement; the order of ``pool_ids`` does not matter."""
    if len(pool_ids) == 0:
        raise ValueError("cannot select from an empty pool")
    ids = sorted(pool_ids)
    rng = generator(seed, "select_random")
    order = rng.permutation(len(ids))
    return [ids[i] for i in order[:min(n_prime, len(ids))]]
