import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from oracles import wilcoxon_bruteforce_p

from graftsurv.errors import DataError
from graftsurv.stats import (
    ScoreMatrix,
    critical_difference,
    friedman_test,
    holm_correction,
    rank_models,
    wilcoxon_signed_rank,
)


def matrix(values, models=None):
    v = np.asarray(values, float)
    return ScoreMatrix(v, models or [f"m{i}" for i in range(v.shape[0])], [f"d{j}" for j in range(v.shape[1])])


def test_ranks_higher_is_better_with_average_ties():
    r = rank_models(matrix([[0.9, 0.5], [0.7, 0.5], [0.1, 0.6]]))
    assert r[:, 0].tolist() == [1, 2, 3]
    assert r[:, 1].tolist() == [2.5, 2.5, 1]


def test_friedman_matches_scipy(rng):
    for _ in range(20):
        v = rng.integers(0, 5, (4, 7)).astype(float)
        stat, p = friedman_test(matrix(v))
        ref = sps.friedmanchisquare(*v)
        assert stat == pytest.approx(ref.statistic, rel=1e-10)
        assert p == pytest.approx(ref.pvalue, rel=1e-8)


def test_friedman_all_tied():
    assert friedman_test(matrix(np.ones((3, 4)))) == (0.0, 1.0)


def test_wilcoxon_known_values():
    # all five differences positive: one of 32 sign patterns on each side
    w, p = wilcoxon_signed_rank([6, 7, 8, 9, 10], [1, 1, 1, 1, 1])
    assert w == 0 and p == pytest.approx(2 / 32)
    with pytest.raises(DataError):
        wilcoxon_signed_rank([1, 2], [1, 2])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2, 3], [1, 2])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=12))
def test_wilcoxon_exact_equals_enumeration(pairs):
    x, y = (np.array(c, float) for c in zip(*pairs))
    if np.all(x == y):
        return
    assert wilcoxon_signed_rank(x, y)[1] == pytest.approx(wilcoxon_bruteforce_p(x, y), abs=1e-12)


def test_wilcoxon_normal_branch_matches_scipy(rng):
    for _ in range(10):
        x, y = rng.normal(size=30), rng.normal(size=30)
        w, p = wilcoxon_signed_rank(x, y)
        ref = sps.wilcoxon(x, y, correction=True, method="approx")
        assert w == ref.statistic
        assert p == pytest.approx(ref.pvalue, rel=1e-10)


def test_holm():
    np.testing.assert_allclose(holm_correction([0.01, 0.02, 0.04]), [0.03, 0.04, 0.04])
    np.testing.assert_allclose(holm_correction([0.04, 0.01, 0.02]), [0.04, 0.03, 0.04])
    assert holm_correction([0.5, 0.9]).tolist() == [1.0, 1.0]
    with pytest.raises(ValueError):
        holm_correction([1.2])


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_holm_is_monotone_and_bounded(p):
    adj = holm_correction(p)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)
    assert np.all(adj >= np.asarray(p)) and np.all(adj <= 1)


def test_score_matrix_validation():
    with pytest.raises(DataError):
        matrix([[0.5, np.nan], [0.4, 0.3]])
    with pytest.raises(DataError):
        matrix([[0.5, 0.6]])
    with pytest.raises(DataError):
        matrix([[0.5, 0.6], [0.1, 0.2]], models=["a", "a"])


def test_cd_identical_columns_share_a_clique():
    v = [[0.8, 0.7, 0.9, 0.75, 0.85], [0.8, 0.7, 0.9, 0.75, 0.85], [0.6, 0.5, 0.65, 0.55, 0.62]]
    cd = critical_difference(matrix(v, ["a", "b", "c"]))
    assert any({"a", "b"} <= set(c) for c in cd.cliques)
    assert cd.pairwise_p[0, 1] == 1.0


def test_cd_not_significant_gives_one_clique():
    v = [[0.8, 0.6], [0.6, 0.8]]
    cd = critical_difference(matrix(v, ["a", "b"]))
    assert cd.friedman_p >= 0.05 and cd.cliques == (("a", "b"),)


def test_cd_separates_a_dominant_model():
    rng = np.random.default_rng(0)
    base = rng.uniform(0.6, 0.7, 20)
    v = np.vstack([base + 0.2, base + 0.01, base])
    cd = critical_difference(matrix(v, ["top", "mid", "low"]))
    assert cd.cliques[0] == ("top",)
    assert all("top" not in c for c in cd.cliques[1:])
    d = json.loads(cd.to_json())
    assert d["mean_ranks"]["top"] == 1.0
    svg = cd.to_svg()
    assert svg.startswith("<svg") and "top" in svg
