from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .ingest import RatingMatrix, RatingScale


class AttackConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FakeUserProfile:
    """One injected user: the target at max score plus at most ``z`` filler items."""

    ratings: Mapping[int, float]
    target: int
    filler_items: frozenset

    def vector(self, num_items: int) -> np.ndarray:
        x = np.zeros(num_items)
        for i, s in self.ratings.items():
            x[i] = s
        return x

    def check(self, scale: RatingScale, z: int) -> None:
        """Raise ``AssertionError`` unless the profile obeys the attack constraints."""
        assert self.ratings.get(self.target) == scale.max_score, "target not at max score"
        assert self.target not in self.filler_items, "target listed as filler"
        assert len(self.filler_items) <= z, f"{len(self.filler_items)} fillers > z={z}"
        assert set(self.ratings) == set(self.filler_items) | {self.target}, "stray ratings"
        assert scale.is_legal(list(self.ratings.values())).all(), "illegal rating level"


def make_profile(target: int, fillers, scores, scale: RatingScale) -> FakeUserProfile:
    fillers = [int(i) for i in fillers]
    ratings = {i: float(s) for i, s in zip(fillers, scale.round_clip(scores))}
    ratings[int(target)] = float(scale.max_score)
    return FakeUserProfile(ratings, int(target), frozenset(fillers))


def check_budget(matrix: RatingMatrix, target: int, z: int) -> None:
    if not 0 <= target < matrix.num_items:
        raise AttackConfigError(f"target item {target} out of range")
    if z < 0 or z > matrix.num_items - 1:
        raise AttackConfigError(f"filler budget z={z} must lie in [0, n-1={matrix.num_items - 1}]")
