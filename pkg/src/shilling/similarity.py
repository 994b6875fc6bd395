"""User-user similarity kernels and the analytic cosine gradient.

Cosine and euclidean work on full item vectors (0 = unrated); pearson is
computed over co-rated items only. Cases without information (zero norm,
fewer than two co-rated items, zero variance) give similarity 0.

Every kernel rounds to ``DECIMALS`` places. Values that are mathematically
equal but reached through different float paths (scalar vs. vectorized,
different summation order) then compare equal, so the ascending-id tie rule
applies to them consistently.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

DECIMALS = 12


class SimilarityKind(str, Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    PEARSON = "pearson"


def cosine(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        return 0.0
    return round(float(np.clip(x @ y / (nx * ny), -1.0, 1.0)), DECIMALS)


def euclidean_sim(x, y) -> float:
    d = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return round(float(1.0 / (1.0 + d)), DECIMALS)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    both = (x != 0) & (y != 0)
    if both.sum() < 2:
        return 0.0
    xc = x[both] - x[both].mean()
    yc = y[both] - y[both].mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom <= 1e-12:
        return 0.0
    return round(float(np.clip(xc @ yc / denom, -1.0, 1.0)), DECIMALS)


def cosine_gradient(x_u, x_f) -> tuple[np.ndarray, bool]:
    """d cos(x_u, x_f) / d x_f.

    Returns ``(gradient, degenerate)``; ``degenerate`` is True (and the
    gradient zero) when either vector has zero norm.
    """
    x_u = np.asarray(x_u, dtype=float)
    x_f = np.asarray(x_f, dtype=float)
    nu, nf = np.linalg.norm(x_u), np.linalg.norm(x_f)
    if nu == 0 or nf == 0:
        return np.zeros_like(x_f), True
    return x_u / (nu * nf) - (x_u @ x_f) * x_f / (nu * nf**3), False


SIMILARITY_FUNCS = {
    SimilarityKind.COSINE: cosine,
    SimilarityKind.EUCLIDEAN: euclidean_sim,
    SimilarityKind.PEARSON: pearson,
}


def pairwise(dense: np.ndarray, kind: SimilarityKind | str) -> np.ndarray:
    """All-pairs user similarity for an m x n rating array (diagonal included)."""
    kind = SimilarityKind(kind)
    R = np.asarray(dense, dtype=float)
    if kind is SimilarityKind.COSINE:
        norms = np.linalg.norm(R, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        Rn = R / safe[:, None]
        S = Rn @ Rn.T
        S[norms == 0, :] = 0.0
        S[:, norms == 0] = 0.0
        return np.round(np.clip(S, -1.0, 1.0), DECIMALS)
    if kind is SimilarityKind.EUCLIDEAN:
        sq = np.einsum("ij,ij->i", R, R)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (R @ R.T)
        np.maximum(d2, 0.0, out=d2)
        d = np.sqrt(d2)
        np.fill_diagonal(d, 0.0)
        return np.round(1.0 / (1.0 + d), DECIMALS)
    # pearson on co-rated support, via sums restricted to the co-rated mask
    M = (R != 0).astype(float)
    R2 = R * R
    count = M @ M.T
    sx = R @ M.T  # sum of u's ratings over items both rated
    sy = sx.T
    sxx = R2 @ M.T
    syy = sxx.T
    sxy = R @ R.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cnt = np.maximum(count, 1.0)
        cov = sxy - sx * sy / cnt
        vx = sxx - sx * sx / cnt
        vy = syy - sy * sy / cnt
        scale_x = np.maximum(sxx, 1.0)
        scale_y = np.maximum(syy, 1.0)
        ok = (count >= 2) & (vx > 1e-9 * scale_x) & (vy > 1e-9 * scale_y)
        S = np.where(ok, cov / np.sqrt(np.where(ok, vx * vy, 1.0)), 0.0)
    return np.round(np.clip(S, -1.0, 1.0), DECIMALS)


def similarity_to(dense: np.ndarray, x: np.ndarray, kind: SimilarityKind | str) -> np.ndarray:
    """Similarity of every row of ``dense`` to one vector ``x``."""
    kind = SimilarityKind(kind)
    R = np.asarray(dense, dtype=float)
    x = np.asarray(x, dtype=float)
    if kind is SimilarityKind.COSINE:
        norms = np.linalg.norm(R, axis=1)
        nx = np.linalg.norm(x)
        if nx == 0:
            return np.zeros(len(R))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(norms > 0, (R @ x) / (np.where(norms > 0, norms, 1.0) * nx), 0.0)
        return np.round(np.clip(out, -1.0, 1.0), DECIMALS)
    if kind is SimilarityKind.EUCLIDEAN:
        return np.round(1.0 / (1.0 + np.linalg.norm(R - x[None, :], axis=1)), DECIMALS)
    return np.array([pearson(row, x) for row in R])
