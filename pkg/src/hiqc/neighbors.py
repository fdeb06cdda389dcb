"""K-nearest-neighbour search over labeled queries.

Three index kinds share one interface:

* ``exact-cosine``  brute-force cosine distance (1 - cos) over vectors
* ``hnsw-cosine``   approximate cosine search through :class:`~hiqc.hnsw.HNSW`
* ``levenshtein``   brute-force edit distance over raw strings

Exact kinds order results by (distance, id).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .corpus import QueryRecord
from .errors import EmptyIndex, KeyMismatch, KindMismatch
from .hnsw import HNSW

KINDS = ("exact-cosine", "hnsw-cosine", "levenshtein")


@njit(cache=True)
def _lev(a, b):
    n, m = len(a), len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            v = prev[j - 1] + cost
            if prev[j] + 1 < v:
                v = prev[j] + 1
            if cur[j - 1] + 1 < v:
                v = cur[j - 1] + 1
            cur[j] = v
        prev, cur = cur, prev
    return prev[m]


@njit(cache=True)
def _lev_many(q, codes, offsets):
    n = len(offsets) - 1
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = _lev(q, codes[offsets[i]:offsets[i + 1]])
    return out


def _codes(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit-cost insert, delete and substitute."""
    return int(_lev(_codes(a), _codes(b)))


@dataclass
class HnswParams:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0


@dataclass
class NeighborIndex:
    kind: str
    ids: list[str]
    keys: np.ndarray | list[str]
    hnsw_params: HnswParams | None = None
    _graph: HNSW | None = field(default=None, repr=False)
    _codes: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.ids)


def build_index(labeled: Sequence[QueryRecord | str], keys, kind: str = "exact-cosine", hnsw_params: HnswParams | None = None) -> NeighborIndex:
    """Index ``keys`` (vectors, or strings for ``levenshtein``) under the labeled records' ids.

    Entries are stored sorted by id so that index position order is id order.
    """
    ids = [r.id if isinstance(r, QueryRecord) else r for r in labeled]
    if kind not in KINDS:
        raise ValueError(f"unknown index kind {kind!r}; expected one of {KINDS}")
    if len(ids) == 0:
        raise EmptyIndex("cannot index an empty labeled set")
    if len(keys) != len(ids):
        raise KeyMismatch(f"{len(ids)} ids but {len(keys)} keys")
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    sorted_ids = [ids[i] for i in order]
    if kind == "levenshtein":
        if not all(isinstance(keys[i], str) for i in order):
            raise KindMismatch("levenshtein index needs string keys")
        strs = [keys[i] for i in order]
        parts = [_codes(s) for s in strs]
        offsets = np.zeros(len(parts) + 1, np.int64)
        offsets[1:] = np.cumsum([len(p) for p in parts])
        codes = np.concatenate(parts) if parts else np.zeros(0, np.int64)
        return NeighborIndex(kind, sorted_ids, strs, _codes=(codes, offsets))

    arr = np.asarray(keys, dtype=float)
    if arr.ndim != 2:
        raise KindMismatch(f"{kind} index needs a 2-d array of vectors")
    arr = arr[order]
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    unit = arr / np.maximum(norms, 1e-12)
    if kind == "exact-cosine":
        return NeighborIndex(kind, sorted_ids, unit)
    hp = hnsw_params or HnswParams()
    graph = HNSW(unit, m=hp.m, ef_construction=hp.ef_construction, ef_search=hp.ef_search, seed=hp.seed)
    return NeighborIndex(kind, sorted_ids, unit, hnsw_params=hp, _graph=graph)


def knn(index: NeighborIndex, key, k: int) -> list[tuple[str, float]]:
    """Up to ``k`` nearest entries as (id, distance), nearest first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, len(index))
    if index.kind == "levenshtein":
        if not isinstance(key, str):
            raise KindMismatch("levenshtein index takes string queries")
        codes, offsets = index._codes
        d = _lev_many(_codes(key), codes, offsets)
        top = np.lexsort((np.arange(len(d)), d))[:k]
        return [(index.ids[i], float(d[i])) for i in top]
    if isinstance(key, str):
        raise KindMismatch(f"{index.kind} index takes vector queries")
    q = np.asarray(key, dtype=float)
    if q.ndim != 1 or q.shape[0] != index.keys.shape[1]:
        raise KindMismatch(f"query vector has shape {q.shape}, index width is {index.keys.shape[1]}")
    q = q / max(np.linalg.norm(q), 1e-12)
    if index.kind == "exact-cosine":
        # row-wise reduction: equal rows get bit-equal distances, so ties stay ties
        d = 1.0 - np.einsum("ij,j->i", index.keys, q, optimize=False)
        if k < len(d):
            part = np.argpartition(d, k - 1)
            cut = d[part[k - 1]]
            cand = np.flatnonzero(d <= cut)
        else:
            cand = np.arange(len(d))
        top = cand[np.lexsort((cand, d[cand]))][:k]
        return [(index.ids[i], float(d[i])) for i in top]
    ids, d = index._graph.query(q, k)
    return [(index.ids[i], float(di)) for i, di in zip(ids, d)]
