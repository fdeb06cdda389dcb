"""Label-hierarchy-aware query classifier.

Forward pass for a batch of queries::

    E      = encoder(queries)                          # B x d_q
    emb_G  = A @ relu(A @ X @ W1) @ W2                 # |V| x d_g, two-layer GCN
    attn   = softmax((E @ W_align) @ emb_G.T)          # B x |V|
    emb_l  = attn @ emb_G                              # B x d_g
    emb_f  = [E, emb_l]                                # B x (d_q + d_g)
    probs  = sigmoid(emb_f @ W_head + b_head)          # B x (|V| - 1)

Head columns follow the label graph's node order with the root dropped, so
head column ``j`` scores label id ``j + 1``. Gradients are written out by
hand in :func:`backward`; the test-suite checks them against finite
differences and an autodiff reimplementation.
"""

from __future__ import annotations

import copy
import io
import json
import zipfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import QueryRecord
from .encoder import EmbeddingStore, EncoderParams, encode_batch, init_encoder, pooling_matrix
from .errors import DimensionMismatch, TaxonomyMismatch
from .taxonomy import LabelGraph, Taxonomy

CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    encoder: EncoderParams
    label_features: np.ndarray
    gcn_w1: np.ndarray
    gcn_w2: np.ndarray
    align_w: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    taxonomy_hash: str = ""
    use_label_hierarchy: bool = True
    mask_root_attention: bool = False
    store: EmbeddingStore | None = None
    revision: int = 0

    @property
    def d_q(self) -> int:
        return self.store.width if self.store is not None else self.encoder.d_q

    @property
    def d_g(self) -> int:
        return self.gcn_w2.shape[1]

    def trainable(self) -> dict[str, np.ndarray]:
        """Parameter groups that receive gradients under the current flags."""
        out = {}
        if self.store is None:
            out["embedding_table"] = self.encoder.embedding_table
        if self.use_label_hierarchy:
            out.update(label_features=self.label_features, gcn_w1=self.gcn_w1, gcn_w2=self.gcn_w2, align_w=self.align_w)
        out.update(head_w=self.head_w, head_b=self.head_b)
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "embedding_table": self.encoder.embedding_table,
            "label_features": self.label_features,
            "gcn_w1": self.gcn_w1,
            "gcn_w2": self.gcn_w2,
            "align_w": self.align_w,
            "head_w": self.head_w,
            "head_b": self.head_b,
        }

    def with_arrays(self, updates: dict[str, np.ndarray]) -> "ModelParams":
        """Copy with some arrays replaced and the revision bumped."""
        enc = self.encoder
        if "embedding_table" in updates:
            enc = replace(enc, embedding_table=updates["embedding_table"])
        rest = {k: v for k, v in updates.items() if k != "embedding_table"}
        return replace(self, encoder=enc, revision=self.revision + 1, **rest)

    def copy(self) -> "ModelParams":
        return self.with_arrays({k: v.copy() for k, v in self.arrays().items()})

    def num_parameters(self, trainable_only: bool = True) -> int:
        groups = self.trainable() if trainable_only else self.arrays()
        return int(sum(v.size for v in groups.values()))


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    child: int
    parent: int

    def child_distribution(self, t: Taxonomy, floor: float = 1e-7) -> np.ndarray:
        """Child-label probabilities renormalized to sum to one (order: ``t.children``)."""
        return _renormalize(self.probs[np.asarray(t.children) - 1], floor)

    def parent_distribution(self, t: Taxonomy, floor: float = 1e-7) -> np.ndarray:
        """Parent-label probabilities renormalized to sum to one (order: ``t.leaf_parents``)."""
        return _renormalize(self.probs[np.asarray(t.leaf_parents) - 1], floor)


def _renormalize(p: np.ndarray, floor: float) -> np.ndarray:
    p = np.clip(p, floor, 1.0 - floor)
    return p / p.sum()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(
    t: Taxonomy,
    g: LabelGraph,
    seed: int = 0,
    d_q: int = 64,
    buckets: int = 8192,
    d_h: int = 64,
    d_g: int = 64,
    hash_seed: int = 0,
    store: EmbeddingStore | None = None,
    label_records: Sequence[QueryRecord] = (),
    use_label_hierarchy: bool = True,
    mask_root_attention: bool = False,
) -> ModelParams:
    """Fresh parameters with label node features taken from label text.

    With the built-in encoder, label names are encoded by the same table the
    queries use. With an external store, a label uses the ``label:<name>``
    row when present and otherwise the centroid of ``label_records`` that
    carry it (parents pool their children's centroids).
    """
    if g.taxonomy is not t:
        if g.taxonomy.fingerprint() != t.fingerprint():
            raise DimensionMismatch("label graph was built from a different taxonomy")
    rng = np.random.default_rng(seed)
    enc = init_encoder(int(rng.integers(2**31)), buckets=buckets, d_q=d_q, hash_seed=hash_seed)
    n = len(t)
    if store is None:
        feats = np.zeros((n, d_q))
        feats[1:] = encode_batch(enc, [t.names[i] for i in range(1, n)])
    else:
        feats = _store_label_features(t, store, label_records)
    feats[0] = feats[1:].mean(axis=0)
    d_l = feats.shape[1]
    head = len(t) - 1
    dq = feats.shape[1] if store is not None else d_q
    return ModelParams(
        encoder=enc,
        label_features=feats,
        gcn_w1=_glorot(rng, d_l, d_h),
        gcn_w2=_glorot(rng, d_h, d_g),
        align_w=_glorot(rng, dq, d_g),
        head_w=_glorot(rng, dq + d_g, head),
        head_b=np.zeros(head),
        taxonomy_hash=t.fingerprint(),
        use_label_hierarchy=use_label_hierarchy,
        mask_root_attention=mask_root_attention,
        store=store,
    )


def _store_label_features(t: Taxonomy, store: EmbeddingStore, records: Sequence[QueryRecord]) -> np.ndarray:
    n = len(t)
    feats = np.zeros((n, store.width))
    have = np.zeros(n, dtype=bool)
    sums: dict[int, list[np.ndarray]] = {}
    for r in records:
        if r.child_label is not None and r.id in store:
            sums.setdefault(r.child_label, []).append(store.vectors[r.id])
    for i in range(1, n):
        key = f"label:{t.names[i]}"
        if key in store:
            feats[i], have[i] = store.vectors[key], True
        elif i in sums:
            feats[i], have[i] = np.mean(sums[i], axis=0), True
    # internal labels without their own row pool their children, deepest first
    for i in sorted(t.parents, key=lambda p: -len(t.ancestors(p))):
        if not have[i]:
            kids = [c for c in t.children_of(i) if have[c]]
            if kids:
                feats[i], have[i] = feats[kids].mean(axis=0), True
    return feats


def check_dimensions(params: ModelParams, g: LabelGraph) -> None:
    n = g.size
    d_q = params.d_q
    lf = params.label_features
    want = {
        "label_features": (n, lf.shape[1]),
        "gcn_w1": (lf.shape[1], params.gcn_w1.shape[1]),
        "gcn_w2": (params.gcn_w1.shape[1], params.gcn_w2.shape[1]),
        "align_w": (d_q, params.gcn_w2.shape[1]),
        "head_w": (d_q + params.gcn_w2.shape[1], n - 1),
        "head_b": (n - 1,),
    }
    for name, shape in want.items():
        got = getattr(params, name).shape
        if got != shape:
            raise DimensionMismatch(f"{name} has shape {got}, expected {shape}")


# ---------------------------------------------------------------------------
# forward pieces


def _gcn(g: LabelGraph, params: ModelParams) -> dict[str, np.ndarray]:
    a = g.adjacency
    x = params.label_features
    if x.shape[0] != a.shape[0] or x.shape[1] != params.gcn_w1.shape[0] or params.gcn_w1.shape[1] != params.gcn_w2.shape[0]:
        raise DimensionMismatch("label features / GCN weights do not match the label graph")
    ax = a @ x
    z1 = ax @ params.gcn_w1
    ah1 = a @ np.maximum(z1, 0.0)
    return {"G": ah1 @ params.gcn_w2, "AX": ax, "Z1": z1, "AH1": ah1}


def gcn_forward(g: LabelGraph, params: ModelParams) -> np.ndarray:
    """Two-layer GCN over the label graph; no nonlinearity after layer 2."""
    return _gcn(g, params)["G"]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def attention_fuse(emb_q: np.ndarray, emb_g: np.ndarray, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Attention-weighted label embedding for one query (1-d) or a batch (2-d)."""
    single = emb_q.ndim == 1
    e = np.atleast_2d(emb_q)
    if e.shape[1] != params.align_w.shape[0] or emb_g.shape[1] != params.align_w.shape[1]:
        raise DimensionMismatch(
            f"query width {e.shape[1]} / label width {emb_g.shape[1]} do not fit align_w {params.align_w.shape}"
        )
    logits = (e @ params.align_w) @ emb_g.T
    if params.mask_root_attention:
        logits[:, 0] = -np.inf
    attn = _softmax_rows(logits)
    emb_l = attn @ emb_g
    return (emb_l[0], attn[0]) if single else (emb_l, attn)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    pool: sp.csr_matrix | None
    E: np.ndarray
    U: np.ndarray | None
    attn: np.ndarray | None
    gcn: dict[str, np.ndarray] | None
    F: np.ndarray
    P: np.ndarray


def _query_matrix(params: ModelParams, queries: Sequence) -> tuple[np.ndarray, sp.csr_matrix | None]:
    if params.store is not None:
        ids = [q.id if isinstance(q, QueryRecord) else q for q in queries]
        return params.store.lookup(ids), None
    texts = [q.text if isinstance(q, QueryRecord) else q for q in queries]
    pool = pooling_matrix(params.encoder, texts)
    return np.asarray(pool @ params.encoder.embedding_table), pool


def forward_batch(params: ModelParams, g: LabelGraph, queries: Sequence) -> ForwardCache:
    """Run the model on records (or raw texts when no store is attached)."""
    e, pool = _query_matrix(params, queries)
    if params.use_label_hierarchy:
        gc = _gcn(g, params)
        emb_l, attn = attention_fuse(e, gc["G"], params)
        u = e @ params.align_w
    else:
        emb_l, attn, u, gc = np.zeros((len(e), params.d_g)), None, None, None
    f = np.concatenate([e, emb_l], axis=1)
    if f.shape[1] != params.head_w.shape[0]:
        raise DimensionMismatch(f"fused width {f.shape[1]} does not match head_w {params.head_w.shape}")
    p = _sigmoid(f @ params.head_w + params.head_b)
    return ForwardCache(pool=pool, E=e, U=u, attn=attn, gcn=gc, F=f, P=p)


def backward(params: ModelParams, g: LabelGraph, cache: ForwardCache, d_probs: np.ndarray, d_fused: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its partials w.r.t. probs and emb_f."""
    p = cache.P
    dz = d_probs * p * (1.0 - p)
    grads = {"head_w": cache.F.T @ dz, "head_b": dz.sum(axis=0)}
    df = dz @ params.head_w.T
    if d_fused is not None:
        df = df + d_fused
    d_q = cache.E.shape[1]
    de = df[:, :d_q].copy()
    if params.use_label_hierarchy:
        gc = cache.gcn
        emb_g = gc["G"]
        del_l = df[:, d_q:]
        attn = cache.attn
        d_attn = del_l @ emb_g.T
        d_g = attn.T @ del_l
        d_logits = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
        d_u = d_logits @ emb_g
        d_g += d_logits.T @ cache.U
        grads["align_w"] = cache.E.T @ d_u
        de += d_u @ params.align_w.T
        a = g.adjacency
        grads["gcn_w2"] = gc["AH1"].T @ d_g
        d_h1 = a.T @ (d_g @ params.gcn_w2.T)
        d_z1 = d_h1 * (gc["Z1"] > 0)
        grads["gcn_w1"] = gc["AX"].T @ d_z1
        grads["label_features"] = a.T @ (d_z1 @ params.gcn_w1.T)
    if params.store is None:
        grads["embedding_table"] = np.asarray(cache.pool.T @ de)
    return grads


def forward(q: QueryRecord | str, g: LabelGraph, params: ModelParams) -> Prediction:
    return predict(params, g, [q])[0]


def predict(params: ModelParams, g: LabelGraph, queries: Sequence, batch_size: int = 512) -> list[Prediction]:
    t = g.taxonomy
    child_cols = np.asarray(t.children) - 1
    out = []
    for start in range(0, len(queries), batch_size):
        probs = forward_batch(params, g, queries[start:start + batch_size]).P
        for row in probs:
            child = int(child_cols[int(np.argmax(row[child_cols]))] + 1)
            out.append(Prediction(probs=row, child=child, parent=t.parent_of[child]))
    return out


def batch_embed(queries: Sequence, g: LabelGraph, params: ModelParams, batch_size: int = 512) -> np.ndarray:
    """Fused embeddings (rows of emb_f), one per query in input order."""
    if not queries:
        return np.zeros((0, params.head_w.shape[0]))
    return np.concatenate(
        [forward_batch(params, g, queries[s:s + batch_size]).F for s in range(0, len(queries), batch_size)]
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "taxonomy_hash": params.taxonomy_hash,
        "hash_seed": params.encoder.hash_seed,
        "ngram_range": list(params.encoder.ngram_range),
        "use_label_hierarchy": params.use_label_hierarchy,
        "mask_root_attention": params.mask_root_attention,
        "external_embeddings": params.store is not None,
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True)), **params.arrays()}
    buf = io.BytesIO()
    # np.savez stamps entries with the wall clock; a fixed date keeps reruns byte-identical
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[name]), allow_pickle=False)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path, t: Taxonomy, store: EmbeddingStore | None = None) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k].copy() for k in z.files if k != "meta"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    if meta["taxonomy_hash"] != t.fingerprint():
        raise TaxonomyMismatch("checkpoint was trained on a different taxonomy")
    if meta["external_embeddings"] and store is None:
        raise ValueError("checkpoint expects external embeddings; pass the embedding store")
    enc = EncoderParams(arrays.pop("embedding_table"), hash_seed=meta["hash_seed"], ngram_range=tuple(meta["ngram_range"]))
    return ModelParams(
        encoder=enc,
        taxonomy_hash=meta["taxonomy_hash"],
        use_label_hierarchy=meta["use_label_hierarchy"],
        mask_root_attention=meta["mask_root_attention"],
        store=store if meta["external_embeddings"] else None,
        **arrays,
    )


def clone(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)
