import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiqc.encoder import (
    _bucket,
    encode,
    encode_batch,
    feature_buckets,
    features,
    init_encoder,
    load_embedding_store,
    pooling_matrix,
    write_embedding_store,
)
from hiqc.errors import DuplicateId, EmptyText, MalformedHeader, MissingEmbedding, WidthMismatch


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_single_feature_is_one_row():
    p = init_encoder(0)
    assert features("abc") == ["abc", "abc"]  # the 3-gram and the word share a bucket
    b = _bucket("abc", p.hash_seed, p.buckets)
    np.testing.assert_array_equal(encode(p, "abc"), p.embedding_table[b])


def test_encode_is_deterministic():
    p = init_encoder(1)
    a, b = encode(p, "cast iron pan"), encode(p, "cast iron pan")
    assert np.array_equal(a, b) and np.all(np.isfinite(a))


def test_encode_matches_hand_mean():
    p = init_encoder(2, buckets=1024, d_q=8)
    feats = features("Knife  Set")
    rows = [_bucket(f, 0, 1024) for f in feats]
    np.testing.assert_allclose(encode(p, "Knife  Set"), p.embedding_table[rows].mean(axis=0), rtol=0, atol=1e-15)


def test_typo_stays_close():
    wins = 0
    for seed in range(20):
        p = init_encoder(seed, buckets=8192, d_q=64)
        k = encode(p, "knife")
        wins += _cos(k, encode(p, "nife")) > _cos(k, encode(p, "sofa"))
    assert wins > 10


def test_batch_equals_single():
    p = init_encoder(3, buckets=2048, d_q=16)
    texts = ["kettle", "red sofa", "knife set for chefs"]
    np.testing.assert_allclose(encode_batch(p, texts), np.stack([encode(p, x) for x in texts]), atol=1e-12)


def test_hash_seed_changes_buckets():
    assert feature_buckets("kettle", 0, 8192) != feature_buckets("kettle", 1, 8192)


def test_empty_text():
    p = init_encoder(0)
    for bad in ("", "   "):
        with pytest.raises(EmptyText):
            encode(p, bad)
        with pytest.raises(EmptyText):
            encode_batch(p, ["ok", bad])


def test_small_tables_rejected():
    with pytest.raises(ValueError):
        init_encoder(0, buckets=512)
    with pytest.raises(ValueError):
        init_encoder(0, d_q=4)


def test_gradient_of_pooling():
    # d/dT of sum(w * encode(T, x)) is the pooling row outer w; check by central differences
    p = init_encoder(4, buckets=1024, d_q=8)
    texts = ["ab kn", "so"]
    rng = np.random.default_rng(0)
    w = rng.normal(size=(2, 8))
    pool = pooling_matrix(p, texts)
    grad = np.asarray(pool.T @ w)
    base = p.embedding_table.copy()
    for r in sorted(set(pool.indices.tolist())):
        for c in range(8):
            def f(delta):
                p.embedding_table = base.copy()
                p.embedding_table[r, c] += delta
                return float((encode_batch(p, texts) * w).sum())
            num = (f(1e-4) - f(-1e-4)) / 2e-4
            assert abs(num - grad[r, c]) <= 1e-4 * max(1e-6, abs(num), abs(grad[r, c]))
    p.embedding_table = base


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["knife", "pan", "sofa", "kettle", "oak"]), min_size=1, max_size=4), st.randoms())
def test_same_feature_multiset_same_vector(words, rnd):
    p = init_encoder(0, buckets=1024, d_q=8)
    shuffled = words[:]
    rnd.shuffle(shuffled)
    a, b = " ".join(words), " ".join(shuffled)
    if sorted(features(a)) == sorted(features(b)):
        np.testing.assert_array_equal(encode(p, a), encode(p, b))
    # the word unigrams never depend on order
    assert sorted(a.split()) == sorted(b.split())


def test_single_word_repeats_are_order_free():
    p = init_encoder(0, buckets=1024, d_q=8)
    np.testing.assert_array_equal(encode(p, "pan pan"), encode(p, "pan  pan"))


def test_store_round_trip(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("2 3\na 1 2 3\nb 0.5 -1 4e-3\n")
    s = load_embedding_store(path)
    assert len(s) == 2 and s.width == 3
    np.testing.assert_array_equal(s.lookup(["b"])[0], [0.5, -1, 0.004])
    write_embedding_store(tmp_path / "f.txt", s)
    again = load_embedding_store(tmp_path / "f.txt")
    assert all(np.array_equal(again.vectors[k], s.vectors[k]) for k in s.vectors)
    with pytest.raises(MissingEmbedding):
        s.lookup(["zzz"])


@pytest.mark.parametrize(
    "body, err",
    [
        ("2 3\na 1 2\nb 1 2 3\n", WidthMismatch),
        ("2 3\na 1 2 3\na 4 5 6\n", DuplicateId),
        ("", MalformedHeader),
        ("two three\na 1 2 3\n", MalformedHeader),
        ("3 3\na 1 2 3\n", MalformedHeader),
        ("1 2\na 1 nan\n", WidthMismatch),
    ],
)
def test_store_errors(tmp_path, body, err):
    path = tmp_path / "bad.txt"
    path.write_text(body)
    with pytest.raises(err):
        load_embedding_store(path)
