"""HitRatio@N, target-item selection and the attack experiment grid."""

from __future__ import annotations

import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import BASELINES
from .bprmf import MFModel, train_bprmf
from .ingest import RatingMatrix, RatingScale, SCALES, load_ratings, split
from .knn import KNNRecommender
from .profiles import FakeUserProfile
from .similarity import SimilarityKind
from .unattack import AttackConfig, unattack

logger = logging.getLogger(__name__)

COLD_MAX_RATERS = 5
COLD_MAX_HR = 0.001
WARM_MIN_HR = 0.1
TARGET_CATEGORIES = ("random", "cold_start", "warm_start")
ATTACKS = ("none", "random", "average", "bandwagon", "covisitation", "unattack")


class UndefinedHitRatio(ValueError):
    """Every genuine user rated the item, so U_t- is empty."""


def _ratios(top: np.ndarray, matrix: RatingMatrix, items) -> np.ndarray:
    """HitRatio per item from a (normal users x items) top-N mask."""
    items = np.asarray(items, dtype=np.int64)
    not_rated = ~matrix.rated[: matrix.n_normal][:, items]
    denom = not_rated.sum(axis=0)
    hits = (top[:, items] & not_rated).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, hits / np.maximum(denom, 1), np.nan)


def knn_hit_ratios(matrix: RatingMatrix, items, n: int = 20, k: int = 30, kind="cosine") -> np.ndarray:
    """HitRatio of several items under one user-KNN model; nan where U_t- is empty.

    Only genuine users count; injected users still act as neighbors.
    """
    rec = KNNRecommender(matrix, k, kind)
    top = rec.top_n(n, np.arange(matrix.n_normal))
    return _ratios(top, matrix, items)


def mf_hit_ratios(model: MFModel, matrix: RatingMatrix, items, n: int = 20) -> np.ndarray:
    top = model.top_n(matrix, n, np.arange(matrix.n_normal))
    return _ratios(top, matrix, items)


def hit_ratio(matrix: RatingMatrix, t: int, n: int = 20, k: int = 30, kind="cosine") -> float:
    if not 0 <= t < matrix.num_items:
        raise IndexError(f"item {t} out of range")
    value = knn_hit_ratios(matrix, [t], n, k, kind)[0]
    if np.isnan(value):
        raise UndefinedHitRatio(f"item {t} was rated by every genuine user")
    return float(value)


@dataclass(frozen=True)
class TargetItemSet:
    category: str
    items: tuple[int, ...]
    thresholds: dict = field(default_factory=dict)
    short: bool = False  # fewer qualifying items than requested


def select_targets(
    matrix: RatingMatrix,
    category: str,
    count: int = 10,
    n: int = 20,
    k: int = 30,
    kind="cosine",
    seed: int = 0,
    baseline_hr: np.ndarray | None = None,
) -> TargetItemSet:
    """Pick target items: uniform random, cold-start or warm-start.

    cold_start: fewer than 5 raters and pre-attack HitRatio < 0.001;
    warm_start: pre-attack HitRatio > 0.1. Items rated by every genuine user
    have no HitRatio and never qualify.
    """
    category = {"cold": "cold_start", "warm": "warm_start"}.get(category, category)
    if category not in TARGET_CATEGORIES:
        raise ValueError(f"unknown target category {category!r}")
    rng = np.random.default_rng(seed)
    if category == "random":
        raters = np.bincount(matrix.normal_part().items, minlength=matrix.num_items)
        pool = np.flatnonzero(raters < matrix.n_normal)
        thresholds = {}
    else:
        hr = baseline_hr if baseline_hr is not None else knn_hit_ratios(
            matrix, np.arange(matrix.num_items), n, k, kind
        )
        defined = ~np.isnan(hr)
        if category == "cold_start":
            raters = np.bincount(matrix.normal_part().items, minlength=matrix.num_items)
            ok = defined & (raters < COLD_MAX_RATERS) & (np.nan_to_num(hr, nan=1.0) < COLD_MAX_HR)
            thresholds = {"max_raters_exclusive": COLD_MAX_RATERS, "max_hr_exclusive": COLD_MAX_HR}
        else:
            ok = defined & (np.nan_to_num(hr, nan=0.0) > WARM_MIN_HR)
            thresholds = {"min_hr_exclusive": WARM_MIN_HR}
        pool = np.flatnonzero(ok)
    short = len(pool) < count
    if short:
        logger.warning("only %d %s items qualify, %d requested", len(pool), category, count)
        chosen = pool
    else:
        chosen = np.sort(rng.choice(pool, size=count, replace=False))
    return TargetItemSet(category, tuple(int(i) for i in chosen), thresholds, short)


@dataclass
class ExperimentSpec:
    dataset: str
    dataset_name: str = ""
    scale: RatingScale = SCALES["movielens"]
    delimiter: str | None = "\t"
    skip_header: bool = False
    train_frac: float = 0.8
    val_frac: float = 0.1
    split_seed: int = 0
    attacks: tuple = ("none",)
    attack_sizes: tuple = (0.02,)
    target_type: str = "random"
    target_count: int = 10
    target_items: tuple = ()
    similarities: tuple = ("cosine",)
    k: int = 30
    n: int = 20
    z: int = 10
    lam: float = 0.5
    eta: float = 0.01
    iters: int = 100
    target_users: int | None = None
    recompute_every: int = 1
    seed: int = 0
    transfer: bool = False
    knn: bool = True
    bpr_dim: int = 20
    bpr_lr: float = 0.01
    bpr_reg: float = 0.01
    bpr_epochs: int = 50
    fake_file: str | None = None

    def __post_init__(self):
        for attack in self.attacks:
            if attack not in ATTACKS and attack != "file":
                raise ValueError(f"unknown attack {attack!r}")
        for kind in self.similarities:
            SimilarityKind(kind)
        for size in self.attack_sizes:
            if not 0 <= size < 1:
                raise ValueError(f"attack size {size} must be a fraction in [0, 1)")
        if "file" in self.attacks and not self.fake_file:
            raise ValueError("attack 'file' needs fake_file")
        if not self.knn and not self.transfer:
            raise ValueError("nothing to evaluate: enable knn and/or transfer")

    def attack_config(self, j: int, seed: int) -> AttackConfig:
        return AttackConfig(
            lam=self.lam, k=self.k, n=self.n, z=self.z, j=j, eta=self.eta, max_iters=self.iters,
            target_users=self.target_users, recompute_every=self.recompute_every, seed=seed,
        )

    def as_dict(self) -> dict:
        out = asdict(self)
        out["scale"] = [self.scale.min_score, self.scale.max_score, self.scale.step]
        return out


@dataclass
class HitRatioReport:
    dataset: str
    attack: str
    target_category: str
    attack_size: float
    similarity: str  # similarity kind for KNN rows, "bprmf" for transfer rows
    k: int
    n: int
    z: int
    lam: float
    seed: int
    num_fake: int
    items: tuple
    hr_none: tuple
    hr_post: tuple
    target_users: tuple
    error: str = ""

    @property
    def mean_none(self) -> float:
        return float(np.mean(self.hr_none)) if self.hr_none else math.nan

    @property
    def mean_post(self) -> float:
        return float(np.mean(self.hr_post)) if self.hr_post else math.nan


def attack_seed(seed: int, attack: str, size: float, target: int) -> int:
    """Seed for one (attack, size, target) cell, independent of grid order."""
    ss = np.random.SeedSequence([seed, zlib.crc32(attack.encode()), int(round(size * 1e6)), int(target)])
    return int(ss.generate_state(1)[0])


def generate_fakes(spec: ExperimentSpec, matrix: RatingMatrix, attack: str, target: int, j: int, seed: int):
    if attack == "none" or j == 0:
        return []
    if attack == "unattack":
        return unattack(matrix, target, spec.attack_config(j, seed))
    return BASELINES[attack](matrix, target, j, spec.z, seed=seed)


def load_experiment_data(spec: ExperimentSpec) -> RatingMatrix:
    data = load_ratings(spec.dataset, spec.scale, spec.delimiter, spec.skip_header)
    train, _, _ = split(data, spec.train_frac, spec.val_frac, spec.split_seed)
    return train


def run_experiment(
    spec: ExperimentSpec,
    matrix: RatingMatrix | None = None,
    external_fakes: Sequence[FakeUserProfile] | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[HitRatioReport]:
    """Run every (attack, size, similarity) cell of the grid on one dataset.

    The attacked matrix is the training split. Targets are chosen once, with
    the first similarity kind, and shared by all cells. Each cell starts from
    the clean matrix; a failing cell is reported with its error and the rest
    of the grid continues.
    """
    say = progress or (lambda msg: logger.info(msg))
    train = matrix if matrix is not None else load_experiment_data(spec)
    name = spec.dataset_name or spec.dataset
    kinds = [SimilarityKind(k).value for k in spec.similarities]
    all_items = np.arange(train.num_items)

    clean_hr = {kind: knn_hit_ratios(train, all_items, spec.n, spec.k, kind) for kind in kinds} if spec.knn else {}
    if spec.target_items:
        targets = TargetItemSet("explicit", tuple(int(t) for t in spec.target_items))
    else:
        targets = select_targets(
            train, spec.target_type, spec.target_count, spec.n, spec.k, kinds[0], spec.seed,
            baseline_hr=clean_hr.get(kinds[0]),
        )
    items = np.array(targets.items, dtype=np.int64)
    say(f"targets ({targets.category}): {list(targets.items)}")

    clean_model = None
    clean_mf = None
    if spec.transfer:
        clean_model = train_bprmf(train, spec.bpr_dim, spec.bpr_lr, spec.bpr_epochs, spec.bpr_reg, spec.seed)
        clean_mf = mf_hit_ratios(clean_model, train, items, spec.n)

    reports: list[HitRatioReport] = []
    for attack in spec.attacks:
        for size in spec.attack_sizes:
            j = int(round(size * train.n_normal))
            post = {kind: [] for kind in kinds}
            post_mf: list[float] = []
            error = ""
            started = time.perf_counter()
            try:
                for pos, t in enumerate(items):
                    if attack == "file":
                        fakes = [p for p in (external_fakes or []) if p.target == t]
                    else:
                        fakes = generate_fakes(spec, train, attack, int(t), j, attack_seed(spec.seed, attack, size, t))
                    poisoned = train.inject(fakes)
                    for kind in kinds:
                        post[kind].append(knn_hit_ratios(poisoned, [t], spec.n, spec.k, kind)[0])
                    if spec.transfer:
                        if fakes:
                            model = train_bprmf(
                                poisoned, spec.bpr_dim, spec.bpr_lr, spec.bpr_epochs, spec.bpr_reg, spec.seed
                            )
                            post_mf.append(mf_hit_ratios(model, poisoned, [t], spec.n)[0])
                        else:
                            post_mf.append(clean_mf[pos])
            except Exception as exc:  # one bad cell must not sink the grid
                logger.exception("cell %s/%s failed", attack, size)
                error = f"{type(exc).__name__}: {exc}"
            say(f"{attack} size={size} j={j} done in {time.perf_counter() - started:.1f}s")
            denom = tuple(int(len(train.non_raters(int(t)))) for t in items)
            common = dict(
                dataset=name, attack=attack, target_category=targets.category, attack_size=size,
                k=spec.k, n=spec.n, z=spec.z, lam=spec.lam, seed=spec.seed, num_fake=j,
                items=tuple(int(t) for t in items), target_users=denom, error=error,
            )
            if spec.knn:
                for kind in kinds:
                    reports.append(
                        HitRatioReport(
                            similarity=kind,
                            hr_none=tuple(float(v) for v in clean_hr[kind][items]),
                            hr_post=tuple(float(v) for v in post[kind]) if not error else (),
                            **common,
                        )
                    )
            if spec.transfer:
                reports.append(
                    HitRatioReport(
                        similarity="bprmf",
                        hr_none=tuple(float(v) for v in clean_mf),
                        hr_post=tuple(float(v) for v in post_mf) if not error else (),
                        **common,
                    )
                )
    return reports


REPORT_COLUMNS = (
    "dataset", "attack", "target_category", "attack_size", "similarity", "K", "N", "z", "lambda",
    "seed", "hr_none", "hr_post",
)


def report_rows(reports: Sequence[HitRatioReport]) -> list[list[str]]:
    rows = []
    for r in reports:
        rows.append([
            r.dataset, r.attack, r.target_category, f"{r.attack_size:g}", r.similarity, str(r.k), str(r.n),
            str(r.z), f"{r.lam:g}", str(r.seed), f"{r.mean_none:.6f}",
            f"{r.mean_post:.6f}" if not r.error else "nan",
        ])
    return rows


def summary_table(reports: Sequence[HitRatioReport]) -> str:
    """Fixed-width table of mean HitRatio per cell."""
    header = f"{'attack':<13}{'size':>7}  {'similarity':<10}{'targets':<12}{'HR none':>9}{'HR post':>9}"
    lines = [header, "-" * len(header)]
    for r in reports:
        post = "error" if r.error else f"{r.mean_post:.4f}"
        lines.append(
            f"{r.attack:<13}{r.attack_size:>7.2%}  {r.similarity:<10}{r.target_category:<12}"
            f"{r.mean_none:>9.4f}{post:>9}"
        )
    return "\n".join(lines)
