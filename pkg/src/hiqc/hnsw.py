"""Hierarchical navigable small world graph over unit vectors (cosine distance).

Nodes are inserted in index order, so among equal distances the lower
index wins both during construction and in query results.
"""

from __future__ import annotations

import heapq

import numpy as np
from numba import njit


@njit(cache=True)
def _dist(data, i, q):
    s = 0.0
    for k in range(data.shape[1]):
        s += data[i, k] * q[k]
    return 1.0 - s


@njit(cache=True)
def _pair_dist(data, i, j):
    s = 0.0
    for k in range(data.shape[1]):
        s += data[i, k] * data[j, k]
    return 1.0 - s


@njit(cache=True)
def _search_layer(data, q, entry_ids, entry_d, ef, level, links0, cnt0, links_up, cnt_up, visited, stamp):
    cand = [(0.0, np.int64(0))]
    cand.pop()
    res = [(0.0, np.int64(0))]
    res.pop()
    for j in range(len(entry_ids)):
        e = entry_ids[j]
        if visited[e] == stamp:
            continue
        visited[e] = stamp
        heapq.heappush(cand, (entry_d[j], e))
        heapq.heappush(res, (-entry_d[j], -e))
        if len(res) > ef:
            heapq.heappop(res)
    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        if len(res) >= ef and d > -res[0][0]:
            break
        if level == 0:
            n = cnt0[c]
        else:
            n = cnt_up[c, level - 1]
        for k in range(n):
            if level == 0:
                e = links0[c, k]
            else:
                e = links_up[c, level - 1, k]
            if visited[e] == stamp:
                continue
            visited[e] = stamp
            de = _dist(data, e, q)
            if len(res) < ef or de < -res[0][0] or (de == -res[0][0] and -e > res[0][1]):
                heapq.heappush(cand, (de, e))
                heapq.heappush(res, (-de, -e))
                if len(res) > ef:
                    heapq.heappop(res)
    m = len(res)
    ids = np.empty(m, np.int64)
    ds = np.empty(m, np.float64)
    for j in range(m - 1, -1, -1):
        nd, ne = heapq.heappop(res)
        ids[j] = -ne
        ds[j] = -nd
    return ids, ds


@njit(cache=True)
def _select(data, cand_ids, cand_d, m):
    """Diversity heuristic; tops up with the nearest pruned candidates."""
    out = np.empty(m, np.int64)
    n = 0
    taken = np.zeros(len(cand_ids), np.bool_)
    for j in range(len(cand_ids)):
        if n >= m:
            break
        c = cand_ids[j]
        good = True
        for r in range(n):
            if _pair_dist(data, c, out[r]) < cand_d[j]:
                good = False
                break
        if good:
            out[n] = c
            taken[j] = True
            n += 1
    for j in range(len(cand_ids)):
        if n >= m:
            break
        if not taken[j]:
            out[n] = cand_ids[j]
            n += 1
    return out[:n]


@njit(cache=True)
def _greedy(data, q, ep, dep, top, bottom, links_up, cnt_up):
    for level in range(top, bottom, -1):
        changed = True
        while changed:
            changed = False
            for k in range(cnt_up[ep, level - 1]):
                e = links_up[ep, level - 1, k]
                de = _dist(data, e, q)
                if de < dep or (de == dep and e < ep):
                    ep = e
                    dep = de
                    changed = True
    return ep, dep


@njit(cache=True)
def _connect(data, node, level, new, m_max, links0, cnt0, links_up, cnt_up):
    if level == 0:
        n = cnt0[node]
        if n < m_max:
            links0[node, n] = new
            cnt0[node] = n + 1
            return
        pool = np.empty(n + 1, np.int64)
        pool[:n] = links0[node, :n]
    else:
        n = cnt_up[node, level - 1]
        if n < m_max:
            links_up[node, level - 1, n] = new
            cnt_up[node, level - 1] = n + 1
            return
        pool = np.empty(n + 1, np.int64)
        pool[:n] = links_up[node, level - 1, :n]
    pool[n] = new
    d = np.empty(n + 1)
    for j in range(n + 1):
        d[j] = _pair_dist(data, node, pool[j])
    order = np.argsort(d, kind="mergesort")
    keep = _select(data, pool[order], d[order], m_max)
    if level == 0:
        links0[node, : len(keep)] = keep
        cnt0[node] = len(keep)
    else:
        links_up[node, level - 1, : len(keep)] = keep
        cnt_up[node, level - 1] = len(keep)


@njit(cache=True)
def _build(data, levels, m, ef_construction, links0, cnt0, links_up, cnt_up):
    n = data.shape[0]
    visited = np.zeros(n, np.int64)
    stamp = 0
    entry = 0
    top = levels[0]
    for i in range(1, n):
        q = data[i]
        lvl = levels[i]
        ep = entry
        dep = _dist(data, ep, q)
        ep, dep = _greedy(data, q, ep, dep, top, lvl, links_up, cnt_up)
        eps = np.array([ep], np.int64)
        eds = np.array([dep])
        for level in range(min(lvl, top), -1, -1):
            stamp += 1
            w_ids, w_d = _search_layer(data, q, eps, eds, ef_construction, level, links0, cnt0, links_up, cnt_up, visited, stamp)
            m_max = 2 * m if level == 0 else m
            sel = _select(data, w_ids, w_d, m)
            for j in range(len(sel)):
                if level == 0:
                    links0[i, j] = sel[j]
                else:
                    links_up[i, level - 1, j] = sel[j]
            if level == 0:
                cnt0[i] = len(sel)
            else:
                cnt_up[i, level - 1] = len(sel)
            for j in range(len(sel)):
                _connect(data, sel[j], level, i, m_max, links0, cnt0, links_up, cnt_up)
            eps = w_ids
            eds = w_d
        if lvl > top:
            top = lvl
            entry = i
    return entry, top


@njit(cache=True)
def _query(data, q, k, ef, entry, top, links0, cnt0, links_up, cnt_up, visited, stamp):
    ep, dep = _greedy(data, q, entry, _dist(data, entry, q), top, 0, links_up, cnt_up)
    ids, ds = _search_layer(
        data, q, np.array([ep], np.int64), np.array([dep]), max(ef, k), 0, links0, cnt0, links_up, cnt_up, visited, stamp
    )
    kk = min(k, len(ids))
    return ids[:kk], ds[:kk]


class HNSW:
    """Approximate cosine k-NN. ``data`` rows are normalized on construction."""

    def __init__(self, data: np.ndarray, m: int = 16, ef_construction: int = 200, ef_search: int = 64, seed: int = 0):
        x = np.asarray(data, dtype=np.float64)
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        self.data = np.ascontiguousarray(x / np.maximum(norms, 1e-12))
        self.m, self.ef_construction, self.ef_search = m, ef_construction, ef_search
        n = len(self.data)
        rng = np.random.default_rng(seed)
        ml = 1.0 / np.log(m)
        self.levels = np.minimum(np.floor(-np.log(1.0 - rng.random(n)) * ml), 16).astype(np.int64)
        depth = max(1, int(self.levels.max()) if n else 1)
        self.links0 = np.zeros((n, 2 * m), np.int64)
        self.cnt0 = np.zeros(n, np.int64)
        self.links_up = np.zeros((n, depth, m), np.int64)
        self.cnt_up = np.zeros((n, depth), np.int64)
        self._visited = np.zeros(n, np.int64)
        self._stamp = 0
        if n:
            self.entry, self.top = _build(self.data, self.levels, m, ef_construction, self.links0, self.cnt0, self.links_up, self.cnt_up)

    def __len__(self) -> int:
        return len(self.data)

    def query(self, q: np.ndarray, k: int, ef: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Indices and cosine distances of (approximately) the ``k`` nearest rows, ascending."""
        v = np.asarray(q, dtype=np.float64)
        v = v / max(np.linalg.norm(v), 1e-12)
        self._stamp += 1
        ids, _ = _query(
            self.data, v, k, ef or self.ef_search, self.entry, self.top,
            self.links0, self.cnt0, self.links_up, self.cnt_up, self._visited, self._stamp,
        )
        # exact distances for the returned ids, ties by index
        d = 1.0 - self.data[ids] @ v
        order = np.lexsort((ids, d))
        return ids[order], d[order]
