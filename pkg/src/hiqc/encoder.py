"""Hashed character n-gram query encoder and an external embedding store.

A query is lower-cased, whitespace-collapsed and broken into every
character n-gram (n in ``ngram_range``) of the full string plus its
whitespace-separated words. Each feature is hashed into one of ``buckets``
rows of a learnable table and the rows are mean-pooled. Word and n-gram
features share one hash space, so a three-letter word and its sole 3-gram
land in the same row.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DuplicateId, EmptyText, MalformedHeader, MissingEmbedding, WidthMismatch


@dataclass
class EncoderParams:
    embedding_table: np.ndarray
    hash_seed: int = 0
    ngram_range: tuple[int, int] = (3, 5)

    def __post_init__(self):
        b, d = self.embedding_table.shape
        if b < 1024 or d < 8:
            raise ValueError(f"encoder needs buckets >= 1024 and d_q >= 8, got {b} x {d}")

    @property
    def buckets(self) -> int:
        return self.embedding_table.shape[0]

    @property
    def d_q(self) -> int:
        return self.embedding_table.shape[1]


def init_encoder(seed: int, buckets: int = 8192, d_q: int = 64, hash_seed: int = 0, scale: float = 1.0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    return EncoderParams(rng.normal(0.0, scale, size=(buckets, d_q)), hash_seed=hash_seed)


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def features(text: str, ngram_range: tuple[int, int] = (3, 5)) -> list[str]:
    s = normalize(text)
    lo, hi = ngram_range
    out = [s[i:i + n] for n in range(lo, hi + 1) for i in range(len(s) - n + 1)]
    out.extend(s.split())
    return out


def _bucket(feature: str, hash_seed: int, buckets: int) -> int:
    h = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=hash_seed.to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little") % buckets


@lru_cache(maxsize=200_000)
def feature_buckets(text: str, hash_seed: int, buckets: int, ngram_range: tuple[int, int] = (3, 5)) -> tuple[int, ...]:
    """Bucket index of every feature of ``text`` (a multiset, in feature order)."""
    feats = features(text, ngram_range)
    if not feats:
        raise EmptyText(f"query {text!r} has no features")
    return tuple(_bucket(f, hash_seed, buckets) for f in feats)


def pooling_matrix(params: EncoderParams, texts: Sequence[str]) -> sp.csr_matrix:
    """Sparse ``len(texts) x buckets`` matrix whose product with the table mean-pools each text's rows."""
    rows, cols, vals = [], [], []
    for i, text in enumerate(texts):
        if not text or not text.strip():
            raise EmptyText("cannot encode empty text")
        idx = feature_buckets(text, params.hash_seed, params.buckets, tuple(params.ngram_range))
        w = 1.0 / len(idx)
        rows.extend([i] * len(idx))
        cols.extend(idx)
        vals.extend([w] * len(idx))
    m = sp.csr_matrix((vals, (rows, cols)), shape=(len(texts), params.buckets))
    m.sum_duplicates()
    return m


def encode(params: EncoderParams, text: str) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("cannot encode empty text")
    idx = feature_buckets(text, params.hash_seed, params.buckets, tuple(params.ngram_range))
    return params.embedding_table[list(idx)].mean(axis=0)


def encode_batch(params: EncoderParams, texts: Sequence[str]) -> np.ndarray:
    return np.asarray(pooling_matrix(params, texts) @ params.embedding_table)


# ---------------------------------------------------------------------------
# external embeddings


@dataclass
class EmbeddingStore:
    vectors: dict[str, np.ndarray]
    width: int

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, keys: Sequence[str]) -> np.ndarray:
        try:
            return np.stack([self.vectors[k] for k in keys]) if keys else np.zeros((0, self.width))
        except KeyError as exc:
            raise MissingEmbedding(f"no embedding for {exc.args[0]!r}") from None


def load_embedding_store(path: str | Path) -> EmbeddingStore:
    """Read ``N d`` then N rows of ``id v1 ... vd``."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise MalformedHeader("embedding file is empty")
    head = lines[0].split()
    try:
        n, d = (int(x) for x in head)
    except ValueError:
        raise MalformedHeader(f"header must be 'N d', got {lines[0]!r}") from None
    if n < 0 or d < 1:
        raise MalformedHeader(f"header must be 'N d', got {lines[0]!r}")
    if len(lines) - 1 != n:
        raise MalformedHeader(f"header declares {n} rows, file has {len(lines) - 1}")
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split()
        if len(parts) - 1 != d:
            raise WidthMismatch(f"line {lineno}: expected {d} values, found {len(parts) - 1}")
        if parts[0] in vectors:
            raise DuplicateId(f"line {lineno}: id {parts[0]!r} repeated")
        vec = np.array([float(x) for x in parts[1:]])
        if not np.all(np.isfinite(vec)):
            raise WidthMismatch(f"line {lineno}: non-finite value")
        vectors[parts[0]] = vec
    return EmbeddingStore(vectors, d)


def write_embedding_store(path: str | Path, store: EmbeddingStore) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(store)} {store.width}\n")
        for k, v in store.vectors.items():
            fh.write(k + " " + " ".join(repr(float(x)) for x in v) + "\n")
