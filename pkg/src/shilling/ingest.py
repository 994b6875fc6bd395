"""Rating data: parsing, the immutable rating matrix, per-item statistics and splits."""

from __future__ import annotations

import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class RatingParseError(ValueError):
    """A rating file line could not be parsed."""


class RatingValidationError(ValueError):
    """A rating value is not a legal level of the declared scale."""


@dataclass(frozen=True)
class RatingScale:
    min_score: float
    max_score: float
    step: float

    def __post_init__(self):
        if not self.min_score < self.max_score:
            raise ValueError(f"min_score {self.min_score} must be < max_score {self.max_score}")
        if self.step <= 0:
            raise ValueError("step must be positive")
        span = (self.max_score - self.min_score) / self.step
        if abs(span - round(span)) > 1e-9:
            raise ValueError("(max_score - min_score) must be a multiple of step")
        if self.min_score <= 0:
            # 0 is reserved for "unrated" in dense views
            raise ValueError("min_score must be positive")

    @property
    def levels(self) -> np.ndarray:
        count = int(round((self.max_score - self.min_score) / self.step)) + 1
        return self.min_score + self.step * np.arange(count)

    def is_legal(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        k = (values - self.min_score) / self.step
        return (np.abs(k - np.round(k)) < 1e-9) & (values >= self.min_score - 1e-9) & (
            values <= self.max_score + 1e-9
        )

    def round_clip(self, values) -> np.ndarray:
        """Snap arbitrary reals to the nearest legal level, clipped to the scale ends."""
        values = np.asarray(values, dtype=float)
        k = np.round((values - self.min_score) / self.step)
        k = np.clip(k, 0, len(self.levels) - 1)
        return self.min_score + self.step * k


SCALES = {
    "movielens": RatingScale(1.0, 5.0, 1.0),
    "filmtrust": RatingScale(0.5, 4.0, 0.5),
    "amazon": RatingScale(1.0, 5.0, 1.0),
}


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Sparse user x item explicit ratings, stored as parallel coordinate arrays.

    Users ``0 .. n_normal-1`` are genuine users; any rows after that were
    injected (fake) users. Instances are never mutated; ``inject`` returns a
    new matrix.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    scores: np.ndarray
    scale: RatingScale
    n_normal: int = -1
    user_ids: tuple = field(default=(), repr=False)
    item_ids: tuple = field(default=(), repr=False)

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        scores = np.ascontiguousarray(self.scores, dtype=float)
        for arr in (users, items, scores):
            arr.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "scores", scores)
        if self.n_normal < 0:
            object.__setattr__(self, "n_normal", self.num_users)
        if not (len(users) == len(items) == len(scores)):
            raise ValueError("coordinate arrays differ in length")
        if len(users) and (users.min() < 0 or users.max() >= self.num_users):
            raise ValueError("user index out of range")
        if len(items) and (items.min() < 0 or items.max() >= self.num_items):
            raise ValueError("item index out of range")
        if not self.scale.is_legal(scores).all():
            raise RatingValidationError("scores off the rating scale")
        keys = users * self.num_items + items
        if len(np.unique(keys)) != len(keys):
            raise ValueError("duplicate (user, item) entries")

    @classmethod
    def from_dense(cls, dense, scale: RatingScale, n_normal: int = -1) -> "RatingMatrix":
        dense = np.asarray(dense, dtype=float)
        users, items = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], users, items, dense[users, items], scale, n_normal)

    @property
    def nnz(self) -> int:
        return len(self.scores)

    @property
    def num_fake(self) -> int:
        return self.num_users - self.n_normal

    @cached_property
    def dense(self) -> np.ndarray:
        """m x n view with 0 at unrated positions (read-only)."""
        out = np.zeros((self.num_users, self.num_items))
        out[self.users, self.items] = self.scores
        out.setflags(write=False)
        return out

    @cached_property
    def rated(self) -> np.ndarray:
        out = np.zeros((self.num_users, self.num_items), dtype=bool)
        out[self.users, self.items] = True
        out.setflags(write=False)
        return out

    def raters(self, item: int) -> np.ndarray:
        """Users who rated ``item`` (U_i+), ascending."""
        return np.sort(self.users[self.items == item])

    def non_raters(self, item: int, normal_only: bool = True) -> np.ndarray:
        """Users who did not rate ``item`` (U_i-), optionally restricted to genuine users."""
        limit = self.n_normal if normal_only else self.num_users
        return np.flatnonzero(~self.rated[:limit, item])

    def entry_set(self) -> set:
        return set(zip(self.users.tolist(), self.items.tolist(), self.scores.tolist()))

    def subset(self, index: np.ndarray) -> "RatingMatrix":
        """Matrix with the same shape holding only the selected entries."""
        return RatingMatrix(
            self.num_users, self.num_items, self.users[index], self.items[index],
            self.scores[index], self.scale, self.n_normal, self.user_ids, self.item_ids,
        )

    def inject(self, profiles: Sequence) -> "RatingMatrix":
        """Append fake users (anything with a ``ratings`` item->score mapping) as new rows."""
        if not profiles:
            return self
        users, items, scores = [self.users], [self.items], [self.scores]
        for k, profile in enumerate(profiles):
            row = sorted(profile.ratings.items())
            users.append(np.full(len(row), self.num_users + k, dtype=np.int64))
            items.append(np.array([i for i, _ in row], dtype=np.int64))
            scores.append(np.array([s for _, s in row], dtype=float))
        return RatingMatrix(
            self.num_users + len(profiles), self.num_items, np.concatenate(users),
            np.concatenate(items), np.concatenate(scores), self.scale, self.n_normal,
            self.user_ids, self.item_ids,
        )

    def normal_part(self) -> "RatingMatrix":
        keep = self.users < self.n_normal
        return RatingMatrix(
            self.n_normal, self.num_items, self.users[keep], self.items[keep],
            self.scores[keep], self.scale, self.n_normal, self.user_ids, self.item_ids,
        )


def _split_line(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None or delimiter in ("whitespace", "ws"):
        return line.split()
    return [tok.strip() for tok in line.split(delimiter)]


def load_ratings(
    path,
    scale: RatingScale,
    delimiter: str | None = "\t",
    skip_header: bool = False,
) -> RatingMatrix:
    """Parse ``user <sep> item <sep> score [extra...]`` lines into a RatingMatrix.

    Raw ids are re-indexed to dense 0-based ids in order of first appearance;
    the raw ids are kept on the matrix (``user_ids``/``item_ids``) for reporting.
    Duplicate (user, item) pairs keep the last score and are counted in a warning.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"rating file not found: {path}")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    cells: dict[tuple[int, int], float] = {}
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if skip_header and lineno == 1:
                continue
            parts = _split_line(line, delimiter)
            if len(parts) < 3:
                raise RatingParseError(f"{path}:{lineno}: expected 'user item score', got {line!r}")
            try:
                score = float(parts[2])
            except ValueError:
                raise RatingParseError(f"{path}:{lineno}: score {parts[2]!r} is not a number") from None
            if not scale.is_legal(score):
                raise RatingValidationError(f"{path}:{lineno}: score {score} not on scale {scale}")
            u = user_index.setdefault(parts[0], len(user_index))
            i = item_index.setdefault(parts[1], len(item_index))
            if (u, i) in cells:
                duplicates += 1
            cells[(u, i)] = score
    if not cells:
        raise RatingParseError(f"{path}: no ratings")
    if duplicates:
        logger.warning("%s: %d duplicate (user, item) pairs, kept the last score", path, duplicates)
    keys = np.array(list(cells.keys()), dtype=np.int64)
    return RatingMatrix(
        len(user_index), len(item_index), keys[:, 0], keys[:, 1],
        np.fromiter(cells.values(), dtype=float, count=len(cells)), scale,
        user_ids=tuple(user_index), item_ids=tuple(item_index),
    )


def format_score(score: float) -> str:
    return str(int(score)) if float(score).is_integer() else repr(float(score))


def write_lines_atomic(path, lines: Iterable[str]) -> None:
    """Write text lines via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_ratings(matrix: RatingMatrix, path, delimiter: str = "\t", raw_ids: bool = False) -> None:
    """Write the canonical ``user item score`` file (dense ids unless ``raw_ids``)."""

    def label(ids, k):
        return str(ids[k]) if raw_ids and k < len(ids) else str(k)

    order = np.lexsort((matrix.items, matrix.users))
    write_lines_atomic(
        path,
        (
            delimiter.join(
                (label(matrix.user_ids, u), label(matrix.item_ids, i), format_score(s))
            )
            for u, i, s in zip(
                matrix.users[order].tolist(), matrix.items[order].tolist(), matrix.scores[order].tolist()
            )
        ),
    )


def sparsity(matrix: RatingMatrix) -> float:
    if matrix.num_users <= 0 or matrix.num_items <= 0:
        raise ValueError("sparsity needs a non-empty shape")
    return 1.0 - matrix.nnz / (matrix.num_users * matrix.num_items)


def split(
    matrix: RatingMatrix, train_frac: float = 0.8, val_frac: float = 0.1, seed: int = 0
) -> tuple[RatingMatrix, RatingMatrix, RatingMatrix]:
    """Entry-level random partition into (train, validation, test).

    ``train_frac`` of the entries (floored) form the train+validation pool, the
    rest is test; ``val_frac`` of that pool (floored) is set aside as
    validation. All three keep the input's shape so ids stay aligned.
    """
    if not (0 < train_frac < 1 and 0 <= val_frac < 1):
        raise ValueError("fractions must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(matrix.nnz)
    n_pool = math.floor(train_frac * matrix.nnz)
    n_val = math.floor(val_frac * n_pool)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:n_pool])
    test_idx = np.sort(perm[n_pool:])
    return matrix.subset(train_idx), matrix.subset(val_idx), matrix.subset(test_idx)


@dataclass(frozen=True)
class ItemStats:
    item: int
    count: int
    mean: float
    std: float
    global_mean: float
    global_std: float
    mean_fallback: bool = False
    std_fallback: bool = False


def item_stats(matrix: RatingMatrix, item: int) -> ItemStats:
    """Rating mean and population std of one item, with global fallbacks.

    Fewer than two raters falls back to the global std; no raters falls back
    to the global mean as well.
    """
    return all_item_stats(matrix)[item]


def all_item_stats(matrix: RatingMatrix) -> list[ItemStats]:
    means, stds, counts, g_mean, g_std = _item_moments(matrix)
    out = []
    for i in range(matrix.num_items):
        c = int(counts[i])
        out.append(
            ItemStats(
                item=i,
                count=c,
                mean=float(means[i]) if c else g_mean,
                std=float(stds[i]) if c >= 2 else g_std,
                global_mean=g_mean,
                global_std=g_std,
                mean_fallback=c == 0,
                std_fallback=c < 2,
            )
        )
    return out


def item_moment_arrays(matrix: RatingMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (mean, std) per item with the same fallbacks as ``item_stats``."""
    means, stds, counts, g_mean, g_std = _item_moments(matrix)
    means = np.where(counts > 0, means, g_mean)
    stds = np.where(counts >= 2, stds, g_std)
    return means, stds


def _item_moments(matrix: RatingMatrix):
    n = matrix.num_items
    counts = np.bincount(matrix.items, minlength=n).astype(float)
    sums = np.bincount(matrix.items, weights=matrix.scores, minlength=n)
    sq = np.bincount(matrix.items, weights=matrix.scores**2, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        var = np.where(counts > 0, sq / np.maximum(counts, 1) - means**2, 0.0)
    stds = np.sqrt(np.maximum(var, 0.0))
    if matrix.nnz:
        g_mean = float(matrix.scores.mean())
        g_std = float(matrix.scores.std())
    else:
        g_mean, g_std = 0.0, 0.0
    return means, stds, counts, g_mean, g_std


@dataclass(frozen=True)
class DatasetSummary:
    num_users: int
    num_items: int
    num_ratings: int
    sparsity: float
    avg_ratings_per_user: float

    def as_text(self) -> str:
        return (
            f"users: {self.num_users}\n"
            f"items: {self.num_items}\n"
            f"ratings: {self.num_ratings}\n"
            f"sparsity: {100 * self.sparsity:.2f}%\n"
            f"average ratings per user: {self.avg_ratings_per_user:.1f}"
        )


def summarize(matrix: RatingMatrix) -> DatasetSummary:
    return DatasetSummary(
        matrix.num_users, matrix.num_items, matrix.nnz, sparsity(matrix), matrix.nnz / matrix.num_users
    )
