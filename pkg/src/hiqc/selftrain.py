"""Neighborhood-aware self-training.

Each round predicts the unlabeled pool, finds every unlabeled query's
nearest labeled queries, scores how well the prediction agrees with that
neighbourhood (a KL-divergence score, lower is better), samples a budget of
queries favouring low scores, moves them with their predicted labels into
the labeled set, and retrains.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import CorpusSplit, QueryRecord
from .encoder import normalize
from .errors import BudgetExceedsPool, EmptyNeighborhood, LengthMismatch
from .model import ModelParams, Prediction, batch_embed, predict
from .neighbors import HnswParams, build_index, knn
from .taxonomy import LabelGraph, Taxonomy
from .trainer import TrainConfig, TrainReport, train, validation_f1

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    k_neighbors: int = 10
    w_child: float = 0.3
    epsilon_smoothing: float = 1e-3
    temperature_sample: float = 1.0
    budget_per_round: float = 0.05  # < 1 means a fraction of the initial pool
    max_rounds: int = 10
    patience_rounds: int = 2
    index_kind: str = "hnsw-cosine"
    hnsw: HnswParams = field(default_factory=HnswParams)
    literal_prob_direction: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0 <= self.w_child <= 1:
            raise ValueError("w_child must lie in [0, 1]")
        if not 0 < self.epsilon_smoothing < 0.1:
            raise ValueError("epsilon_smoothing must lie in (0, 0.1)")
        if self.temperature_sample <= 0:
            raise ValueError("temperature_sample must be > 0")
        if self.budget_per_round < 0:
            raise ValueError("budget_per_round must be >= 0")

    def budget(self, pool_size: int) -> int:
        b = self.budget_per_round
        if 0 < b < 1:
            return max(1, math.ceil(b * pool_size))
        return int(b)


@dataclass
class SampledQuery:
    id: str
    pseudo_child: str
    pseudo_parent: str
    dist: float


@dataclass
class RoundReport:
    round: int
    sampled: list[SampledQuery]
    val_micro_f1: float | None
    val_macro_f1: float | None
    labeled_size: int
    pool_size: int
    pseudo_label_accuracy: float | None = None
    train: TrainReport | None = None

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------------------
# scoring


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """KL(p || q) in nats, with 0 * log 0 taken as 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise LengthMismatch(f"distributions have lengths {p.shape} and {q.shape}")
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def smoothed_onehot(index: int, n: int, eps: float) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    v = np.full(n, eps / (n - 1))
    v[index] = 1.0 - eps
    return v


def _level_score(neighbor_pos: Sequence[int], predicted: np.ndarray, eps: float) -> float:
    n = len(predicted)
    onehots = np.stack([smoothed_onehot(i, n, eps) for i in neighbor_pos])
    centre = onehots.mean(axis=0)
    to_pred = np.mean([kl_divergence(o, predicted) for o in onehots])
    to_centre = np.mean([kl_divergence(o, centre) for o in onehots])
    return float(to_pred + to_centre)


def neighborhood_score(u: QueryRecord, pred: Prediction, neighbors: Sequence[QueryRecord], t: Taxonomy, cfg: SamplerConfig) -> float:
    """Weighted child- and parent-level disagreement between a prediction and its labeled neighbours."""
    if not neighbors:
        raise EmptyNeighborhood(f"query {u.id!r} has no labeled neighbours")
    child_pos = {c: i for i, c in enumerate(t.children)}
    parent_pos = {p: i for i, p in enumerate(t.leaf_parents)}
    eps = cfg.epsilon_smoothing
    child_part = _level_score([child_pos[r.child_label] for r in neighbors], pred.child_distribution(t), eps)
    if cfg.w_child >= 1.0:
        return cfg.w_child * child_part
    parent_part = _level_score(
        [parent_pos[t.parent_of[r.child_label]] for r in neighbors], pred.parent_distribution(t), eps
    )
    return cfg.w_child * child_part + (1.0 - cfg.w_child) * parent_part


def sampling_weights(dists: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    if cfg.literal_prob_direction:
        w = np.asarray(dists, dtype=float).copy()
        return w if w.sum() > 0 else np.ones_like(w)
    z = -np.asarray(dists, dtype=float) / cfg.temperature_sample
    return np.exp(z - z.max())


def sample_candidates(scored: Sequence[tuple[str, float]], budget: int, seed: int, cfg: SamplerConfig) -> list[str]:
    """Draw ``budget`` ids without replacement, each draw proportional to the remaining weights.

    Uses Gumbel top-k, which matches sequential weighted draws. Results are in
    draw order and depend only on the (id, score) pairs and the seed.
    """
    if budget > len(scored):
        raise BudgetExceedsPool(f"budget {budget} exceeds {len(scored)} candidates")
    if budget <= 0:
        return []
    items = sorted(scored, key=lambda x: x[0])
    w = sampling_weights(np.array([d for _, d in items]), cfg)
    rng = np.random.default_rng(seed)
    with np.errstate(divide="ignore"):
        keys = np.log(w) + rng.gumbel(size=len(items))
    order = np.lexsort((np.arange(len(items)), -keys))
    return [items[i][0] for i in order[:budget]]


# ---------------------------------------------------------------------------
# loop


def index_keys(records: Sequence[QueryRecord], g: LabelGraph, params: ModelParams, kind: str):
    if kind == "levenshtein":
        return [normalize(r.text) for r in records]
    return batch_embed(list(records), g, params)


def score_pool(
    pool: Sequence[QueryRecord],
    labeled: Sequence[QueryRecord],
    params: ModelParams,
    g: LabelGraph,
    cfg: SamplerConfig,
) -> tuple[list[tuple[str, float]], dict[str, Prediction]]:
    """Neighbourhood score and prediction for every pooled query."""
    t = g.taxonomy
    preds = predict(params, g, list(pool))
    index = build_index(labeled, index_keys(labeled, g, params, cfg.index_kind), cfg.index_kind, cfg.hnsw)
    by_id = {r.id: r for r in labeled}
    pool_keys = index_keys(pool, g, params, cfg.index_kind)
    scored = []
    for u, pred, key in zip(pool, preds, pool_keys):
        neighbors = [by_id[i] for i, _ in knn(index, key, cfg.k_neighbors)]
        scored.append((u.id, neighborhood_score(u, pred, neighbors, t, cfg)))
    return scored, {u.id: p for u, p in zip(pool, preds)}


def _val_key(micro: float | None, macro: float | None) -> tuple[float, float]:
    if macro is None:
        return (-math.inf, -math.inf)
    return (macro, micro)


def selftrain_loop(
    split: CorpusSplit,
    t: Taxonomy,
    g: LabelGraph,
    init: ModelParams,
    train_cfg: TrainConfig,
    sampler_cfg: SamplerConfig,
    truth: dict[str, int] | None = None,
) -> tuple[ModelParams, list[RoundReport]]:
    """Train, then repeatedly pseudo-label a sampled budget and retrain.

    Round 0 is the initial fit. Stops after ``max_rounds`` rounds, when the
    pool runs dry, or when validation Macro-F1 has not improved for
    ``patience_rounds`` rounds. Returns the best-validation parameters.
    """
    pool = list(split.unlabeled_pool)
    if not pool:
        return init, []
    labeled = [r for r in split.train if r.child_label is not None]
    budget = sampler_cfg.budget(len(pool))

    def fit(params, records, round_no):
        s = CorpusSplit(records, split.validation, split.test)
        cfg = replace(train_cfg, seed=train_cfg.seed + round_no)
        return train(s, t, g, params, cfg)

    params, rep = fit(init, labeled, 0)
    vmi, vma = validation_f1(params, g, split.validation) if split.validation else (None, None)
    reports = [RoundReport(0, [], vmi, vma, len(labeled), len(pool), None, rep)]
    best, best_f1, stale = params, _val_key(vmi, vma), 0

    for round_no in range(1, sampler_cfg.max_rounds + 1):
        if not pool:
            break
        sampled: list[SampledQuery] = []
        acc = None
        b = min(budget, len(pool))
        if b > 0:
            scored, preds = score_pool(pool, labeled, params, g, sampler_cfg)
            chosen = sample_candidates(scored, b, sampler_cfg.seed * 100_003 + round_no, sampler_cfg)
            dist = dict(scored)
            chosen_set = set(chosen)
            for qid in chosen:
                p = preds[qid]
                sampled.append(SampledQuery(qid, t.names[p.child], t.names[p.parent], dist[qid]))
            by_id = {u.id: u for u in pool}
            labeled = labeled + [by_id[q].with_label(preds[q].child) for q in chosen]
            pool = [u for u in pool if u.id not in chosen_set]
            if truth is not None:
                acc = float(np.mean([truth.get(q) == preds[q].child for q in chosen]))
        params, rep = fit(params, labeled, round_no)
        vmi, vma = validation_f1(params, g, split.validation) if split.validation else (None, None)
        reports.append(RoundReport(round_no, sampled, vmi, vma, len(labeled), len(pool), acc, rep))
        log.info("round %d: +%d labeled, val macro %s", round_no, len(sampled), vma)
        score = _val_key(vmi, vma)
        if score > best_f1:
            best, best_f1, stale = params, score, 0
        else:
            stale += 1
            if stale >= sampler_cfg.patience_rounds:
                break
    return best, reports


def write_round_reports(path: str | Path, reports: Sequence[RoundReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def write_sample_ledger(path: str | Path, reports: Sequence[RoundReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            for s in r.sampled:
                fh.write(f"{r.round}\t{s.id}\t{s.pseudo_child}\t{s.pseudo_parent}\t{s.dist:.10g}\n")
