import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiqc.errors import EmptyIndex, KeyMismatch, KindMismatch
from hiqc.hnsw import HNSW
from hiqc.neighbors import HnswParams, build_index, knn, levenshtein


def dp_edit_distance(a: str, b: str) -> int:
    """Textbook full-table dynamic programme."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        table[i][0] = i
    for j in range(len(b) + 1):
        table[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return table[-1][-1]


def brute_force(points, q, k):
    qn = math.sqrt(math.fsum(x * x for x in q))
    dist = []
    for i, p in enumerate(points):
        pn = math.sqrt(math.fsum(x * x for x in p))
        dist.append((1.0 - math.fsum(x * y for x, y in zip(p, q)) / (pn * qn), i))
    return [i for _, i in sorted(dist)[:k]]


def _ids(n):
    return [f"id{i:05d}" for i in range(n)]


def test_levenshtein_examples():
    assert levenshtein("kitten", "sitting") == 3 == dp_edit_distance("kitten", "sitting")
    assert levenshtein("", "abc") == 3
    assert levenshtein("knife", "nife") == 1
    assert levenshtein("héllo", "hello") == 1


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet="abcdé ", max_size=12), st.text(alphabet="abcdé ", max_size=12))
def test_levenshtein_matches_dp(a, b):
    assert levenshtein(a, b) == dp_edit_distance(a, b) == levenshtein(b, a)


def test_levenshtein_index():
    idx = build_index(["k", "s"], ["knife", "sofa"], kind="levenshtein")
    assert knn(idx, "nife", 1) == [("k", 1.0)]
    idx = build_index(["a", "b"], ["kitten", "sitting"], kind="levenshtein")
    assert knn(idx, "kitten", 2) == [("a", 0.0), ("b", 3.0)]


def test_scalar_example():
    # in one dimension every positive point has the same direction, so all cosine distances tie
    # and the ascending-id rule picks the first two entries
    idx = build_index(["a", "b", "c"], np.array([[0.1], [0.5], [0.9]]))
    got = knn(idx, np.array([0.0]), 2)
    assert [i for i, _ in got] == ["a", "b"]
    assert got[0][1] == got[1][1]


def test_self_match_and_clamp():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 4))
    idx = build_index(_ids(5), x)
    first = knn(idx, x[3], 1)[0]
    assert first[0] == "id00003" and abs(first[1]) < 1e-12
    assert len(knn(idx, x[0], 50)) == 5


def test_ties_break_by_id():
    v = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    idx = build_index(["z", "m", "a"], v)
    assert [i for i, _ in knn(idx, np.array([1.0, 0.0]), 2)] == ["m", "z"]


def test_index_errors():
    with pytest.raises(EmptyIndex):
        build_index([], np.zeros((0, 3)))
    with pytest.raises(KeyMismatch):
        build_index(["a", "b"], np.zeros((3, 2)))
    with pytest.raises(KindMismatch):
        build_index(["a"], [np.zeros(2)], kind="levenshtein")
    lev = build_index(["a"], ["abc"], kind="levenshtein")
    with pytest.raises(KindMismatch):
        knn(lev, np.zeros(2), 1)
    vec = build_index(["a"], np.ones((1, 2)))
    with pytest.raises(KindMismatch):
        knn(vec, "abc", 1)
    with pytest.raises(KindMismatch):
        knn(vec, np.ones(3), 1)
    with pytest.raises(ValueError):
        build_index(["a"], np.ones((1, 2)), kind="annoy")


def test_exact_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n = int(rng.integers(1, 300))
        pts = rng.normal(size=(n, 32))
        if n > 4:
            pts[n // 2] = pts[1]  # exact duplicate exercises the tie rule
        q = rng.normal(size=32)
        k = int(rng.integers(1, 15))
        got = [int(i[2:]) for i, _ in knn(build_index(_ids(n), pts), q, k)]
        assert got == brute_force(pts.tolist(), q.tolist(), k)


def test_hnsw_recall_on_1k():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(1000, 32))
    exact = build_index(_ids(1000), pts)
    approx = build_index(_ids(1000), pts, kind="hnsw-cosine")
    overlap = []
    for q in rng.normal(size=(100, 32)):
        a = {i for i, _ in knn(exact, q, 10)}
        b = {i for i, _ in knn(approx, q, 10)}
        overlap.append(len(a & b) / 10)
    assert np.mean(overlap) >= 0.95


def test_hnsw_small_and_deterministic():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(40, 8))
    h1, h2 = HNSW(pts, seed=5), HNSW(pts, seed=5)
    q = rng.normal(size=8)
    a, b = h1.query(q, 5), h2.query(q, 5)
    np.testing.assert_array_equal(a[0], b[0])
    # 40 points with ef 64 is an exhaustive search
    want = np.argsort(1 - (pts / np.linalg.norm(pts, axis=1, keepdims=True)) @ (q / np.linalg.norm(q)))[:5]
    np.testing.assert_array_equal(a[0], want)
    assert len(HNSW(pts[:1]).query(q, 3)[0]) == 1


def test_hnsw_params_are_recorded():
    idx = build_index(["a", "b"], np.eye(2), kind="hnsw-cosine", hnsw_params=HnswParams(m=8))
    assert idx.hnsw_params.m == 8 and idx.hnsw_params.ef_search == 64


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(2, 300), st.integers(0, 2**32 - 1))
def test_duplicate_rows_get_equal_distances(width, n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, width))
    a, b = sorted(rng.choice(n, size=2, replace=False))
    pts[b] = pts[a]
    res = dict(knn(build_index(_ids(n), pts), rng.normal(size=width), n))
    assert res[f"id{a:05d}"] == res[f"id{b:05d}"]
