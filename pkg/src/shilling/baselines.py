"""Heuristic shilling attacks: random, average, bandwagon and co-visitation.

Filler ratings are Gaussian draws snapped to the nearest legal level and
clipped to the scale; the target always gets the maximum score.
"""

from __future__ import annotations

import math

import numpy as np

from .ingest import RatingMatrix, item_moment_arrays
from .profiles import FakeUserProfile, check_budget, make_profile

BANDWAGON_POPULAR_SHARE = 0.2
BANDWAGON_MIN_RATERS = 5


def _global_draws(matrix: RatingMatrix, rng, size) -> np.ndarray:
    return rng.normal(matrix.scores.mean(), matrix.scores.std(), size=size)


def _item_draws(matrix: RatingMatrix, items, rng) -> np.ndarray:
    means, stds = item_moment_arrays(matrix)
    items = np.asarray(items, dtype=np.int64)
    return rng.normal(means[items], stds[items])


def _uniform_fillers(n: int, target: int, z: int, rng, exclude=()) -> np.ndarray:
    pool = np.setdiff1d(np.arange(n), np.asarray([target, *exclude], dtype=np.int64))
    return rng.choice(pool, size=z, replace=False)


def random_attack(matrix: RatingMatrix, target: int, j: int, z: int, seed=0) -> list[FakeUserProfile]:
    check_budget(matrix, target, z)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(j):
        fillers = _uniform_fillers(matrix.num_items, target, z, rng)
        out.append(make_profile(target, fillers, _global_draws(matrix, rng, z), matrix.scale))
    return out


def average_attack(matrix: RatingMatrix, target: int, j: int, z: int, seed=0) -> list[FakeUserProfile]:
    check_budget(matrix, target, z)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(j):
        fillers = _uniform_fillers(matrix.num_items, target, z, rng)
        out.append(make_profile(target, fillers, _item_draws(matrix, fillers, rng), matrix.scale))
    return out


def popular_items(matrix: RatingMatrix, count: int, exclude: int, min_raters: int = BANDWAGON_MIN_RATERS) -> np.ndarray:
    """Highest-average items among those with at least ``min_raters`` raters (ties by id)."""
    counts = np.bincount(matrix.items, minlength=matrix.num_items)
    sums = np.bincount(matrix.items, weights=matrix.scores, minlength=matrix.num_items)
    avg = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    eligible = np.flatnonzero((counts >= min_raters) & (np.arange(matrix.num_items) != exclude))
    order = eligible[np.lexsort((eligible, -avg[eligible]))]
    return order[:count]


def bandwagon_attack(matrix: RatingMatrix, target: int, j: int, z: int, seed=0) -> list[FakeUserProfile]:
    check_budget(matrix, target, z)
    rng = np.random.default_rng(seed)
    popular = popular_items(matrix, math.ceil(BANDWAGON_POPULAR_SHARE * z), target)
    out = []
    for _ in range(j):
        rest = _uniform_fillers(matrix.num_items, target, z - len(popular), rng, exclude=popular)
        fillers = np.concatenate([popular, rest])
        out.append(make_profile(target, fillers, _global_draws(matrix, rng, z), matrix.scale))
    return out


def covisitation_weights(matrix: RatingMatrix, target: int, floor: float = 1.0) -> np.ndarray:
    """Sampling weight per item: number of users rating both it and the target, floored."""
    raters = matrix.raters(target)
    co = np.bincount(matrix.items[np.isin(matrix.users, raters)], minlength=matrix.num_items).astype(float)
    weights = np.maximum(co, floor)
    weights[target] = 0.0
    return weights


def covisitation_attack(
    matrix: RatingMatrix, target: int, j: int, z: int, seed=0, floor: float = 1.0
) -> list[FakeUserProfile]:
    check_budget(matrix, target, z)
    rng = np.random.default_rng(seed)
    weights = covisitation_weights(matrix, target, floor)
    support = np.count_nonzero(weights)
    if support < z:
        raise ValueError(f"only {support} items have positive co-visitation weight, need z={z}")
    p = weights / weights.sum()
    out = []
    for _ in range(j):
        fillers = rng.choice(matrix.num_items, size=z, replace=False, p=p)
        out.append(make_profile(target, fillers, _item_draws(matrix, fillers, rng), matrix.scale))
    return out


BASELINES = {
    "random": random_attack,
    "average": average_attack,
    "bandwagon": bandwagon_attack,
    "covisitation": covisitation_attack,
}
