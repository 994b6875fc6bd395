import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shilling.ingest import (
    SCALES, RatingMatrix, RatingParseError, RatingScale, RatingValidationError, item_stats, load_ratings,
    save_ratings, sparsity, split, summarize,
)

from conftest import random_matrix


def write(tmp_path, text, name="r.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_toy_file(tmp_path):
    path = write(tmp_path, "u1\ti1\t4\nu1\ti2\t5\nu2\ti1\t3\n")
    m = load_ratings(path, SCALES["movielens"])
    assert (m.num_users, m.num_items, m.nnz) == (2, 2, 3)
    assert m.user_ids == ("u1", "u2")
    assert m.dense.tolist() == [[4, 5], [3, 0]]


def test_empty_file(tmp_path):
    with pytest.raises(RatingParseError, match="no ratings"):
        load_ratings(write(tmp_path, "\n# only a comment\n"), SCALES["movielens"])


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(RatingParseError, match=":2:"):
        load_ratings(write(tmp_path, "1\t1\t4\n1\t2\n"), SCALES["movielens"])


def test_off_scale_score(tmp_path):
    with pytest.raises(RatingValidationError):
        load_ratings(write(tmp_path, "1\t1\t4.5\n"), SCALES["movielens"])
    # half points are legal on the FilmTrust scale
    assert load_ratings(write(tmp_path, "1 1 3.5\n"), SCALES["filmtrust"], delimiter=None).nnz == 1


def test_duplicates_keep_last(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        m = load_ratings(write(tmp_path, "1\t1\t4\n1\t1\t2\n"), SCALES["movielens"])
    assert m.nnz == 1 and m.scores[0] == 2
    assert "1 duplicate" in caplog.text


def test_extra_columns_and_comments(tmp_path):
    m = load_ratings(write(tmp_path, "# header\n1\t1\t4\t881250949\n\n2\t1\t5\t0\n"), SCALES["movielens"])
    assert m.nnz == 2


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_ratings(tmp_path / "nope.txt", SCALES["movielens"])


def test_scale_levels_and_round_clip():
    ft = SCALES["filmtrust"]
    assert ft.levels.tolist() == [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
    assert ft.round_clip([-3, 0.74, 0.76, 9]).tolist() == [0.5, 0.5, 1.0, 4.0]
    with pytest.raises(ValueError):
        RatingScale(1, 5, 1.5)
    with pytest.raises(ValueError):
        RatingScale(0, 5, 1)  # 0 is reserved for unrated


def test_sparsity():
    scale = SCALES["movielens"]
    assert sparsity(RatingMatrix.from_dense(np.full((3, 4), 2.0), scale)) == 0
    assert sparsity(RatingMatrix.from_dense([[1, 0], [0, 0]], scale)) == 0.75
    # FilmTrust counts from its published statistics
    assert round(1 - 35497 / (1508 * 2071), 4) == 0.9886


def test_split_counts_and_determinism():
    m = random_matrix(0, 20, 20, density=0.3)
    m = m.subset(np.arange(100))
    train, val, test = split(m, 0.8, 0.1, seed=3)
    assert (train.nnz, val.nnz, test.nnz) == (72, 8, 20)
    again = split(m, 0.8, 0.1, seed=3)
    assert [p.entry_set() for p in again] == [train.entry_set(), val.entry_set(), test.entry_set()]


def test_split_seed_changes_partition(movielens):
    a, _, _ = split(movielens, 0.8, 0.1, seed=11)
    b, _, _ = split(movielens, 0.8, 0.1, seed=12)
    assert a.entry_set() != b.entry_set()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), train=st.floats(0.05, 0.95), val=st.floats(0.0, 0.9))
def test_split_is_partition(seed, train, val):
    m = random_matrix(seed % 1000, 9, 7, density=0.6)
    parts = split(m, train, val, seed)
    entries = [p.entry_set() for p in parts]
    assert sum(len(e) for e in entries) == m.nnz
    assert set().union(*entries) == m.entry_set()


def test_item_stats():
    scale = SCALES["movielens"]
    dense = np.array([[4, 2, 0], [4, 4, 0], [4, 0, 0]], dtype=float)
    m = RatingMatrix.from_dense(dense, scale)
    s0 = item_stats(m, 0)
    assert (s0.mean, s0.std, s0.count) == (4, 0, 3)
    s1 = item_stats(m, 1)
    assert (s1.mean, s1.std) == (3, 1)
    s2 = item_stats(m, 2)
    assert s2.mean_fallback and s2.std_fallback
    assert s2.mean == pytest.approx(m.scores.mean()) and s2.std == pytest.approx(m.scores.std())


def test_item_stats_single_rater_uses_global_std():
    m = RatingMatrix.from_dense([[5, 1], [0, 3]], SCALES["movielens"])
    s = item_stats(m, 0)
    assert s.mean == 5 and s.std_fallback and s.std == pytest.approx(np.std([5, 1, 3]))


def test_round_trip(tmp_path):
    m = random_matrix(5, 12, 9, density=0.4, scale=SCALES["filmtrust"])
    path = tmp_path / "out.tsv"
    save_ratings(m, path)
    again = load_ratings(path, SCALES["filmtrust"])
    labelled = {(int(again.user_ids[u]), int(again.item_ids[i]), s) for u, i, s in again.entry_set()}
    assert labelled == m.entry_set()


def test_inject_and_normal_part():
    m = random_matrix(1, 4, 3)

    class P:
        ratings = {0: 5.0, 2: 3.0}

    aug = m.inject([P(), P()])
    assert (aug.num_users, aug.n_normal, aug.num_fake) == (6, 4, 2)
    assert aug.dense[5].tolist() == [5, 0, 3]
    assert aug.normal_part().entry_set() == m.entry_set()
    assert aug.non_raters(0).max() < 4


def test_matrix_is_immutable():
    m = random_matrix(1, 4, 3)
    with pytest.raises(ValueError):
        m.dense[0, 0] = 1
    with pytest.raises(ValueError):
        m.scores[0] = 1


def test_movielens_table_counts(movielens):
    s = summarize(movielens)
    assert (s.num_users, s.num_items, s.num_ratings) == (943, 1682, 100000)
    assert round(s.avg_ratings_per_user) == 106
