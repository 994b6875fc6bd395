"""Gradient-based optimal shilling attack against user-based KNN (cosine similarity).

Each fake user is optimized in turn. Its rating vector is relaxed to the box
[0, max_score]^n and trained by projected gradient descent on a pairwise
surrogate of HitRatio, summed over target users u (users who have not rated
the target t)::

    loss_u = (1 - lam) * sum_{v in S(u,K)} sigmoid(s_uv - s_uf)
             + lam     * sum_{i in L_u}    sigmoid(p_ui - p_ut)

The relaxed profile is then turned into a discrete one: the target gets the
maximum score, the z highest-valued other items become fillers and get
scores drawn from each filler's rating distribution among genuine users.
The discrete profile is injected before the next fake user is optimized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import expit

from .ingest import RatingMatrix, item_moment_arrays
from .knn import top_n_mask
from .profiles import AttackConfigError, FakeUserProfile, check_budget, make_profile
from .similarity import DECIMALS

logger = logging.getLogger(__name__)


class DegenerateProfileError(ValueError):
    """The relaxed fake profile has zero norm, so cosine similarity is undefined."""


@dataclass(frozen=True)
class AttackConfig:
    lam: float = 0.5
    k: int = 30
    n: int = 20
    z: int = 10
    j: int = 1
    eta: float = 0.01
    max_iters: int = 100
    target_users: int | None = None  # sample size from U_t-, None = all
    recompute_every: int = 1
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise AttackConfigError("lambda must lie in [0, 1]")
        if self.k < 1 or self.n < 1:
            raise AttackConfigError("K and N must be >= 1")
        if self.z < 1:
            raise AttackConfigError("z must be >= 1")
        if self.j < 0:
            raise AttackConfigError("j must be >= 0")
        if self.eta <= 0:
            raise AttackConfigError("eta must be positive")
        if self.max_iters < 1 or self.recompute_every < 1:
            raise AttackConfigError("max_iters and recompute_every must be >= 1")
        if self.target_users is not None and self.target_users < 1:
            raise AttackConfigError("target_users must be >= 1 or None")


@dataclass
class Neighborhoods:
    """S(u,K) and L_u for every target user, frozen at some profile."""

    fake_in: np.ndarray  # (U,) bool: fake user is among u's top-K
    normal_sims: np.ndarray  # (U, K) similarities of the normal neighbors in S(u,K)
    normal_mask: np.ndarray  # (U, K) which columns of normal_sims belong to S(u,K)
    list_rows: np.ndarray  # (pairs,) row into the target-user arrays
    list_items: np.ndarray  # (pairs,) item i in L_u, target excluded


@dataclass
class LossTerms:
    users: np.ndarray
    loss1: np.ndarray
    loss2: np.ndarray
    fake_in: np.ndarray
    q: np.ndarray  # s_uv - s_uf, masked entries are nan
    p: np.ndarray  # p_ui - p_ut per L_u pair


@dataclass
class ContinuousProfile:
    x: np.ndarray
    target: int
    loss: float
    initial_loss: float
    history: list = field(default_factory=list)


class AttackProblem:
    """Loss and gradient of the relaxed attack objective for one fake user.

    Holds everything that does not depend on the fake profile: the current
    matrix (genuine users plus previously injected fakes), the target users,
    their sorted neighbor similarities, and the two prediction matrices
    p_u = sum over top-K (fake absent) and top-(K-1) (fake present, its own
    term added on the fly).
    """

    def __init__(self, matrix: RatingMatrix, target: int, cfg: AttackConfig, rng=None):
        check_budget(matrix, target, min(cfg.z, matrix.num_items - 1))
        self.matrix = matrix
        self.target = int(target)
        self.cfg = cfg
        self.r_max = matrix.scale.max_score
        dense = matrix.dense
        m = matrix.num_users

        users = matrix.non_raters(target, normal_only=True)
        if cfg.target_users is not None and cfg.target_users < len(users):
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            users = np.sort(rng.choice(users, size=cfg.target_users, replace=False))
        if len(users) == 0:
            raise AttackConfigError(f"item {target} has no target users")
        self.users = users
        X = dense[users]
        norms = np.linalg.norm(X, axis=1)
        self.user_norms = norms
        safe = np.where(norms > 0, norms, 1.0)
        self.unit_rows = X / safe[:, None]
        self.unit_rows[norms == 0] = 0.0
        self.rated = matrix.rated[users]

        all_norms = np.linalg.norm(dense, axis=1)
        all_unit = dense / np.where(all_norms > 0, all_norms, 1.0)[:, None]
        sims = np.round(np.clip(self.unit_rows @ all_unit.T, -1.0, 1.0), DECIMALS)
        sims[:, all_norms == 0] = 0.0
        sims[np.arange(len(users)), users] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")
        self.k_out = min(cfg.k, m - 1)
        self.k_in = min(cfg.k - 1, m - 1)
        top = order[:, : self.k_out]
        self.top_sims = np.take_along_axis(sims, top, axis=1)
        # fake joins S(u,K) iff it beats the K-th other user; ties go to the lower id
        self.kth = self.top_sims[:, cfg.k - 1] if m - 1 >= cfg.k else np.full(len(users), -np.inf)

        rows = np.arange(len(users))[:, None]
        W = np.zeros((len(users), m))
        W[rows, top[:, : self.k_in]] = self.top_sims[:, : self.k_in]
        self.pred_in = W @ dense
        if self.k_out > self.k_in:
            W[rows, top[:, self.k_in : self.k_out]] = self.top_sims[:, self.k_in : self.k_out]
            self.pred_out = W @ dense
        else:
            self.pred_out = self.pred_in
        self._base_lists = top_n_mask(self.pred_out, self.rated, cfg.n)

    def fake_similarity(self, x: np.ndarray) -> np.ndarray:
        nx = np.linalg.norm(x)
        if nx == 0:
            raise DegenerateProfileError("fake profile has zero norm")
        return np.clip(self.unit_rows @ x / nx, -1.0, 1.0)

    def neighborhoods(self, x: np.ndarray) -> Neighborhoods:
        s = self.fake_similarity(x)
        fake_in = s > self.kth
        normal_mask = np.ones(self.top_sims.shape, dtype=bool)
        if self.k_out > self.k_in:
            normal_mask[fake_in, self.k_in :] = False
        # lists of users without the fake in S(u,K) do not depend on x
        in_list = self._base_lists.copy()
        hit = np.flatnonzero(fake_in)
        if len(hit):
            preds = self.pred_in[hit] + s[hit, None] * x[None, :]
            in_list[hit] = top_n_mask(preds, self.rated[hit], self.cfg.n)
        in_list[:, self.target] = False
        rows, items = np.nonzero(in_list)
        return Neighborhoods(fake_in, self.top_sims, normal_mask, rows, items)

    def _terms(self, x: np.ndarray, nb: Neighborhoods):
        s = self.fake_similarity(x)
        q = nb.normal_sims - s[:, None]
        rows, items = nb.list_rows, nb.list_items
        fin = nb.fake_in
        p_target = np.where(fin, self.pred_in[:, self.target] + s * self.r_max, self.pred_out[:, self.target])
        fin_pairs = fin[rows]
        p_items = np.where(
            fin_pairs,
            self.pred_in[rows, items] + s[rows] * x[items],
            self.pred_out[rows, items],
        )
        p = p_items - p_target[rows]
        return s, q, p

    def loss(self, x: np.ndarray, nb: Neighborhoods) -> tuple[float, LossTerms]:
        lam = self.cfg.lam
        s, q, p = self._terms(x, nb)
        loss1 = np.where(nb.normal_mask, expit(q), 0.0).sum(axis=1) + 0.5 * nb.fake_in
        loss2 = np.bincount(nb.list_rows, weights=expit(p), minlength=len(self.users))
        total = float(((1 - lam) * loss1 + lam * loss2).sum())
        terms = LossTerms(self.users, loss1, loss2, nb.fake_in, np.where(nb.normal_mask, q, np.nan), p)
        return total, terms

    def gradient(self, x: np.ndarray, nb: Neighborhoods) -> np.ndarray:
        lam = self.cfg.lam
        s, q, p = self._terms(x, nb)
        nx = np.linalg.norm(x)
        sq = expit(q)
        c1 = -np.where(nb.normal_mask, sq * (1 - sq), 0.0).sum(axis=1)
        sp = expit(p)
        dp = sp * (1 - sp) * nb.fake_in[nb.list_rows]
        rows, items = nb.list_rows, nb.list_items
        c2 = np.bincount(rows, weights=dp * (x[items] - self.r_max), minlength=len(self.users))
        a = (1 - lam) * c1 + lam * c2
        # sum_u a_u * d s_uf / d x, with d s_uf / d x = X_u/(|X_u||x|) - s_uf x/|x|^2
        grad = (a @ self.unit_rows) / nx - (a @ s) * x / nx**2
        grad += lam * np.bincount(items, weights=dp * s[rows], minlength=len(x))
        grad[self.target] = 0.0
        return grad

    def project(self, x: np.ndarray) -> np.ndarray:
        out = np.clip(x, 0.0, self.r_max)
        out[self.target] = self.r_max
        return out

    def initial_profile(self, rng) -> np.ndarray:
        normal = self.matrix.dense[: self.matrix.n_normal]
        mean = normal.mean(axis=0)
        peak = mean.max()
        base = mean / peak if peak > 0 else np.zeros_like(mean)
        x = self.cfg.init_scale * self.r_max * base
        x = x + rng.uniform(0.0, 1e-3 * self.r_max, size=x.shape)
        return self.project(x)


def attack_loss(
    matrix: RatingMatrix, x_f, target: int, cfg: AttackConfig, frozen: Neighborhoods | None = None
) -> tuple[float, LossTerms]:
    problem = AttackProblem(matrix, target, cfg)
    x = np.asarray(x_f, dtype=float)
    return problem.loss(x, frozen if frozen is not None else problem.neighborhoods(x))


def attack_gradient(
    matrix: RatingMatrix, x_f, target: int, cfg: AttackConfig, frozen: Neighborhoods | None = None
) -> np.ndarray:
    problem = AttackProblem(matrix, target, cfg)
    x = np.asarray(x_f, dtype=float)
    return problem.gradient(x, frozen if frozen is not None else problem.neighborhoods(x))


def optimize_profile(
    matrix: RatingMatrix, target: int, cfg: AttackConfig, rng=None, x0=None
) -> ContinuousProfile:
    """Projected gradient descent on the relaxed profile; returns the best-loss iterate."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    problem = AttackProblem(matrix, target, cfg, rng)
    x = problem.project(np.asarray(x0, dtype=float)) if x0 is not None else problem.initial_profile(rng)
    nb = problem.neighborhoods(x)
    loss, _ = problem.loss(x, nb)
    best_x, best_loss, initial = x.copy(), loss, loss
    history = [loss]
    for it in range(cfg.max_iters):
        x = problem.project(x - cfg.eta * problem.gradient(x, nb))
        if (it + 1) % cfg.recompute_every == 0:
            nb = problem.neighborhoods(x)
        loss, _ = problem.loss(x, nb)
        history.append(loss)
        if loss < best_loss:
            best_x, best_loss = x.copy(), loss
    return ContinuousProfile(best_x, int(target), best_loss, initial, history)


def select_fillers(x: np.ndarray, target: int, z: int) -> np.ndarray:
    """The z highest-valued non-target items, ties by ascending id."""
    idx = np.delete(np.arange(len(x)), target)
    return idx[np.lexsort((idx, -x[idx]))][:z]


def discretize(
    profile: ContinuousProfile | np.ndarray, matrix: RatingMatrix, target: int, z: int, rng=None, seed=0
) -> FakeUserProfile:
    """Top-z items become fillers with scores drawn from N(mu_j, sigma_j^2) of genuine raters."""
    x = profile.x if isinstance(profile, ContinuousProfile) else np.asarray(profile, dtype=float)
    check_budget(matrix, target, z)
    rng = rng if rng is not None else np.random.default_rng(seed)
    fillers = select_fillers(x, target, z)
    means, stds = item_moment_arrays(matrix.normal_part())
    return make_profile(target, fillers, rng.normal(means[fillers], stds[fillers]), matrix.scale)


def unattack(
    matrix: RatingMatrix,
    target: int,
    cfg: AttackConfig,
    callback: Callable[[int, RatingMatrix, ContinuousProfile], None] | None = None,
) -> list[FakeUserProfile]:
    """Generate ``cfg.j`` fake users one at a time, each optimized against the matrix
    that already contains the previous ones."""
    check_budget(matrix, target, cfg.z)
    rng = np.random.default_rng(cfg.seed)
    current = matrix
    fakes: list[FakeUserProfile] = []
    for f in range(cfg.j):
        relaxed = optimize_profile(current, target, cfg, rng)
        if callback is not None:
            callback(f, current, relaxed)
        profile = discretize(relaxed, current, target, cfg.z, rng)
        logger.debug("fake %d: loss %.4f -> %.4f", f, relaxed.initial_loss, relaxed.loss)
        fakes.append(profile)
        current = current.inject([profile])
    return fakes


def with_overrides(cfg: AttackConfig, **kwargs) -> AttackConfig:
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})
