import os
from pathlib import Path

import numpy as np
import pytest

from shilling.ingest import SCALES, RatingMatrix, RatingScale, load_ratings

DATA_DIR = Path(os.environ.get("SHILLING_DATA", Path(__file__).resolve().parents[1] / "data"))
MOVIELENS = DATA_DIR / "ml-100k" / "u.data"
FILMTRUST = DATA_DIR / "filmtrust" / "ratings.txt"
AMAZON = DATA_DIR / "amazon" / "ratings.txt"


def random_matrix(seed, m, n, density=0.5, scale=RatingScale(1.0, 5.0, 1.0)) -> RatingMatrix:
    """Seeded random matrix where every user and every item has at least one rating."""
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < density
    mask[np.arange(m), rng.integers(0, n, m)] = True
    mask[rng.integers(0, m, n), np.arange(n)] = True
    levels = scale.levels
    dense = np.where(mask, rng.choice(levels, size=(m, n)), 0.0)
    return RatingMatrix.from_dense(dense, scale)


@pytest.fixture
def toy():
    return random_matrix(7, 6, 5, density=0.5)


@pytest.fixture(scope="session")
def movielens():
    if not MOVIELENS.exists():
        pytest.fail(f"MovieLens 100k not found at {MOVIELENS}; run scripts/fetch_datasets.py")
    return load_ratings(MOVIELENS, SCALES["movielens"])


@pytest.fixture(scope="session")
def filmtrust():
    if not FILMTRUST.exists():
        pytest.fail(f"FilmTrust not found at {FILMTRUST}; place ratings.txt there (see README)")
    return load_ratings(FILMTRUST, SCALES["filmtrust"], delimiter=None)


ACCEPTANCE_LINES: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
