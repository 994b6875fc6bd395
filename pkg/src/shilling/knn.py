"""User-based KNN collaborative filtering with unnormalized neighbor-weighted scores.

p_ui is the plain sum of s_uv * X_vi over u's top-K neighbors v that rated i
(no division by the similarity mass). Ties in every ranking are broken by
ascending id.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .ingest import RatingMatrix
from .similarity import SimilarityKind, pairwise, similarity_to


@dataclass(frozen=True)
class NeighborList:
    user: int
    k: int
    neighbors: tuple[tuple[int, float], ...]

    @property
    def ids(self) -> list[int]:
        return [v for v, _ in self.neighbors]


@dataclass(frozen=True)
class RecommendationList:
    user: int
    n: int
    items: tuple[tuple[int, float], ...]

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.items]

    def __contains__(self, item) -> bool:
        return any(i == item for i, _ in self.items)


def ranked(values: np.ndarray, candidates: np.ndarray | None = None) -> np.ndarray:
    """Indices sorted by value descending, ties by ascending index."""
    values = np.asarray(values, dtype=float)
    idx = np.arange(len(values)) if candidates is None else np.asarray(candidates)
    return idx[np.lexsort((idx, -values[idx]))]


def top_n_mask(scores: np.ndarray, excluded: np.ndarray, n: int) -> np.ndarray:
    """Row-wise boolean mask of the top-``n`` non-excluded columns.

    Exact ascending-id tie-break at the cut, so the mask matches
    ``ranked(row)[:n]`` over non-excluded columns for every row.
    """
    scores = np.where(excluded, -np.inf, scores)
    n_cols = scores.shape[1]
    if n >= n_cols:
        return ~excluded
    cut = -np.partition(-scores, n - 1, axis=1)[:, n - 1]
    above = scores > cut[:, None]
    at = (scores == cut[:, None]) & ~excluded
    need = n - above.sum(axis=1)
    return above | (at & (np.cumsum(at, axis=1) <= need[:, None]))


def neighbor_order(sims: np.ndarray, k: int) -> np.ndarray:
    """Top-k neighbor indices per row of a square similarity array (self excluded)."""
    S = np.array(sims, dtype=float, copy=True)
    np.fill_diagonal(S, -np.inf)
    k = min(k, S.shape[0] - 1)
    # stable sort on -S keeps ascending ids among equal similarities
    return np.argsort(-S, axis=1, kind="stable")[:, :k]


class KNNRecommender:
    """User-based CF over a fixed matrix; all queries are read-only."""

    def __init__(self, matrix: RatingMatrix, k: int = 30, kind: SimilarityKind | str = "cosine"):
        if k < 1:
            raise ValueError("K must be >= 1")
        self.matrix = matrix
        self.k = k
        self.kind = SimilarityKind(kind)

    @cached_property
    def similarities(self) -> np.ndarray:
        return pairwise(self.matrix.dense, self.kind)

    @cached_property
    def neighbor_index(self) -> np.ndarray:
        return neighbor_order(self.similarities, self.k)

    @cached_property
    def weights(self) -> np.ndarray:
        """m x m matrix with s_uv at u's top-K neighbor positions, 0 elsewhere."""
        m = self.matrix.num_users
        W = np.zeros((m, m))
        rows = np.repeat(np.arange(m), self.neighbor_index.shape[1])
        cols = self.neighbor_index.ravel()
        W[rows, cols] = self.similarities[rows, cols]
        return W

    @cached_property
    def predictions(self) -> np.ndarray:
        return self.weights @ self.matrix.dense

    def neighbors(self, u: int) -> NeighborList:
        idx = self.neighbor_index[u]
        return NeighborList(u, self.k, tuple((int(v), float(self.similarities[u, v])) for v in idx))

    def predict(self, u: int, i: int) -> float:
        return float(self.predictions[u, i])

    def recommend(self, u: int, n: int) -> RecommendationList:
        if n < 1:
            raise ValueError("N must be >= 1")
        unrated = np.flatnonzero(~self.matrix.rated[u])
        order = ranked(self.predictions[u], unrated)[:n]
        return RecommendationList(u, n, tuple((int(i), float(self.predictions[u, i])) for i in order))

    def top_n(self, n: int, users: np.ndarray | None = None) -> np.ndarray:
        """Boolean (users x items) mask of each user's top-N list."""
        users = np.arange(self.matrix.num_users) if users is None else np.asarray(users)
        return top_n_mask(self.predictions[users], self.matrix.rated[users], n)


def top_k_neighbors(matrix: RatingMatrix, u: int, k: int, kind: SimilarityKind | str = "cosine") -> NeighborList:
    if not 0 <= u < matrix.num_users:
        raise IndexError(f"user {u} out of range")
    sims = similarity_to(matrix.dense, matrix.dense[u], kind)
    others = np.delete(np.arange(matrix.num_users), u)
    order = ranked(sims, others)[:k]
    return NeighborList(u, k, tuple((int(v), float(sims[v])) for v in order))


def predict(matrix: RatingMatrix, u: int, i: int, nbrs: NeighborList) -> float:
    dense = matrix.dense
    return float(sum(s * dense[v, i] for v, s in nbrs.neighbors if dense[v, i] != 0))


def recommend(
    matrix: RatingMatrix, u: int, n: int, k: int, kind: SimilarityKind | str = "cosine"
) -> RecommendationList:
    if n < 1:
        raise ValueError("N must be >= 1")
    nbrs = top_k_neighbors(matrix, u, k, kind)
    ids = np.array(nbrs.ids, dtype=np.int64)
    sims = np.array([s for _, s in nbrs.neighbors])
    scores = sims @ matrix.dense[ids] if len(ids) else np.zeros(matrix.num_items)
    unrated = np.flatnonzero(~matrix.rated[u])
    order = ranked(scores, unrated)[:n]
    return RecommendationList(u, n, tuple((int(i), float(scores[i])) for i in order))
