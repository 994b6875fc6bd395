"""BPR matrix factorization, the black-box model used to test attack transfer.

Any observed rating counts as a positive interaction. Scores are plain dot
products of user and item factors (no bias terms).

Checkpoint layout (little-endian)::

    bytes 0-7    magic b"BPRMF\\x00\\x00\\x00"
    bytes 8-11   uint32 format version (1)
    bytes 12-15  uint32 num_users m
    bytes 16-19  uint32 num_items n
    bytes 20-23  uint32 embedding size d
    then         m*d float64 user factors, row-major
    then         n*d float64 item factors, row-major
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit

from .ingest import RatingMatrix
from .knn import RecommendationList, ranked, top_n_mask

MAGIC = b"BPRMF\x00\x00\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")


class TrainingError(RuntimeError):
    pass


@dataclass
class MFModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    epoch_losses: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.user_factors.shape[1]

    def scores(self, users=None) -> np.ndarray:
        U = self.user_factors if users is None else self.user_factors[users]
        return U @ self.item_factors.T

    def top_n(self, matrix: RatingMatrix, n: int, users=None) -> np.ndarray:
        users = np.arange(matrix.num_users) if users is None else np.asarray(users)
        return top_n_mask(self.scores(users), matrix.rated[users], n)

    def save(self, path) -> None:
        path = Path(path)
        m, d = self.user_factors.shape
        n = self.item_factors.shape[0]
        payload = (
            _HEADER.pack(MAGIC, VERSION, m, n, d)
            + np.ascontiguousarray(self.user_factors, dtype="<f8").tobytes()
            + np.ascontiguousarray(self.item_factors, dtype="<f8").tobytes()
        )
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "MFModel":
        raw = Path(path).read_bytes()
        magic, version, m, n, d = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a BPRMF checkpoint")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        expected = _HEADER.size + 8 * d * (m + n)
        if len(raw) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        return cls(body[: m * d].reshape(m, d).copy(), body[m * d :].reshape(n, d).copy())


def _sample_negatives(rated: np.ndarray, users: np.ndarray, rng) -> np.ndarray:
    n = rated.shape[1]
    neg = rng.integers(0, n, size=len(users))
    bad = rated[users, neg]
    while bad.any():
        neg[bad] = rng.integers(0, n, size=int(bad.sum()))
        bad = rated[users, neg]
    return neg


def train_bprmf(
    matrix: RatingMatrix,
    d: int = 20,
    lr: float = 0.01,
    epochs: int = 50,
    reg: float = 0.01,
    seed: int = 0,
    batch_size: int = 64,
    init_std: float = 0.1,
) -> MFModel:
    """SGD on BPR triples (u, observed i, unobserved j).

    Each epoch draws ``nnz`` triples: a uniformly random observed entry and a
    uniformly random item the user has not rated. Triples are applied in
    mini-batches; within a batch every update uses the pre-batch factors.
    ``batch_size=1`` is plain per-triple SGD.
    """
    if matrix.nnz == 0:
        raise ValueError("cannot train on an empty matrix")
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, init_std, size=(matrix.num_users, d))
    Q = rng.normal(0.0, init_std, size=(matrix.num_items, d))
    rated = matrix.rated
    fully_rated = rated.all(axis=1)
    usable = np.flatnonzero(~fully_rated[matrix.users])
    losses = []
    for epoch in range(epochs):
        pick = usable[rng.integers(0, len(usable), size=len(usable))]
        users, pos = matrix.users[pick], matrix.items[pick]
        neg = _sample_negatives(rated, users, rng)
        total = 0.0
        for start in range(0, len(pick), batch_size):
            u = users[start : start + batch_size]
            i = pos[start : start + batch_size]
            j = neg[start : start + batch_size]
            pu, qi, qj = P[u], Q[i], Q[j]
            x = np.einsum("bd,bd->b", pu, qi - qj)
            total -= log_expit(x).sum()
            coef = expit(-x)[:, None]  # d/dx ln sigmoid(x)
            np.add.at(P, u, lr * (coef * (qi - qj) - reg * pu))
            np.add.at(Q, i, lr * (coef * pu - reg * qi))
            np.add.at(Q, j, lr * (-coef * pu - reg * qj))
        if not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise TrainingError(f"factors diverged at epoch {epoch + 1}")
        losses.append(total / len(pick))
    return MFModel(P, Q, losses)


def mf_recommend(model: MFModel, matrix: RatingMatrix, u: int, n: int) -> RecommendationList:
    if n < 1:
        raise ValueError("N must be >= 1")
    scores = model.scores([u])[0]
    unrated = np.flatnonzero(~matrix.rated[u])
    order = ranked(scores, unrated)[:n]
    return RecommendationList(u, n, tuple((int(i), float(scores[i])) for i in order))
