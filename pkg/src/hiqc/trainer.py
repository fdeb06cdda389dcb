"""Adam training over the combined objective, plus gradient checking."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import CorpusSplit, QueryRecord
from .errors import EmptyTrainSet, NonFiniteLoss, ShapeMismatch
from .evaluation import micro_macro_f1
from .losses import (
    LossWeights,
    classification_loss_grad,
    combined_loss,
    inter_class_loss_grad,
    intra_class_loss_grad,
)
from .model import ModelParams, backward, forward_batch, predict
from .taxonomy import LabelGraph, Taxonomy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 so contrastive pairs exist")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    classification: float
    intra: float
    inter: float
    val_micro_f1: float | None
    val_macro_f1: float | None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()}, {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"{k}: parameter {p.shape}, gradient {g.shape}, moment {state.m[k].shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p[k] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# batching


def make_batches(records: Sequence[QueryRecord], t: Taxonomy, batch_size: int, rng: np.random.Generator) -> list[list[QueryRecord]]:
    """Shuffled mini-batches, topped up so each holds two children of one parent when the data allows.

    A trailing batch of one record is merged into the previous batch.
    """
    order = rng.permutation(len(records))
    batches = [[records[i] for i in order[s:s + batch_size]] for s in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())

    by_child: dict[int, list[int]] = {}
    for i, r in enumerate(records):
        by_child.setdefault(r.child_label, []).append(i)
    populated: dict[int, list[int]] = {}
    for c in sorted(by_child):
        populated.setdefault(t.parent_of[c], []).append(c)
    rich = sorted(p for p, kids in populated.items() if len(kids) >= 2)
    if not rich:
        return batches

    for batch in batches:
        present: dict[int, set[int]] = {}
        for r in batch:
            present.setdefault(t.parent_of[r.child_label], set()).add(r.child_label)
        if any(len(v) >= 2 for v in present.values()):
            continue
        candidates = [p for p in rich if p in present] or rich
        p = candidates[int(rng.integers(len(candidates)))]
        have = present.get(p, set())
        missing = [c for c in populated[p] if c not in have]
        for c in rng.permutation(missing)[: 2 - len(have)]:
            pool = by_child[int(c)]
            batch.append(records[pool[int(rng.integers(len(pool)))]])
    return batches


# ---------------------------------------------------------------------------
# objective


def loss_and_grads(params: ModelParams, g: LabelGraph, batch: Sequence[QueryRecord], w: LossWeights, need_grads: bool = True) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Combined loss on a labeled batch, its components, and gradients for every trainable group."""
    t = g.taxonomy
    child = [r.child_label for r in batch]
    parent = [t.parent_of[c] for c in child]
    cache = forward_batch(params, g, batch)
    cls, d_probs = classification_loss_grad(cache.P, child, t, w)
    if w.w_contrastive > 0:
        intra, d_intra = intra_class_loss_grad(cache.F, child, parent, w.tau, w.literal_contrastive)
        inter, d_inter = inter_class_loss_grad(cache.F, child, parent, w.tau, w.literal_contrastive)
    else:
        intra = inter = 0.0
        d_intra = d_inter = np.zeros_like(cache.F)
    total = combined_loss(cls, intra, inter, w)
    parts = {"classification": cls, "intra": intra, "inter": inter}
    if not need_grads:
        return total, parts, {}
    wc = w.w_contrastive
    d_fused = wc * (w.w_intra * d_intra + (1.0 - w.w_intra) * d_inter)
    grads = backward(params, g, cache, (1.0 - wc) * d_probs, d_fused)
    trainable = params.trainable()
    grads = {k: v for k, v in grads.items() if k in trainable}
    return total, parts, grads


def batch_loss(params: ModelParams, g: LabelGraph, batch: Sequence[QueryRecord], w: LossWeights) -> float:
    return loss_and_grads(params, g, batch, w, need_grads=False)[0]


# ---------------------------------------------------------------------------
# training


def validation_f1(params: ModelParams, g: LabelGraph, records: Sequence[QueryRecord]) -> tuple[float, float]:
    preds = predict(params, g, records)
    res = micro_macro_f1([r.child_label for r in records], preds, g.taxonomy)
    return res.child_micro_f1, res.child_macro_f1


def train(split: CorpusSplit, t: Taxonomy, g: LabelGraph, init: ModelParams, cfg: TrainConfig) -> tuple[ModelParams, TrainReport]:
    """Fit with Adam; return the parameters from the best validation Macro-F1 epoch (Micro-F1 breaks ties)."""
    records = [r for r in split.train if r.child_label is not None]
    if not records:
        raise EmptyTrainSet("no labeled training records")
    rng = np.random.default_rng(cfg.seed)
    params = init.copy()
    state = AdamState.zeros(params.trainable())
    report = TrainReport()
    best, best_f1, stale = params, (-math.inf, -math.inf), 0
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        batches = make_batches(records, t, cfg.batch_size, rng)
        for batch in batches:
            total, parts, grads = loss_and_grads(params, g, batch, cfg.weights)
            if not math.isfinite(total):
                raise NonFiniteLoss(f"epoch {epoch}: loss {total} (components {parts})")
            updated, state = adam_step(params.trainable(), grads, state, cfg)
            params = params.with_arrays(updated)
            sums += (total, parts["classification"], parts["intra"], parts["inter"])
        sums /= len(batches)
        vmi = vma = None
        if split.validation:
            vmi, vma = validation_f1(params, g, split.validation)
        report.epochs.append(EpochStats(epoch, *map(float, sums), vmi, vma))
        log.debug("epoch %d loss %.5f val macro %s", epoch, sums[0], vma)
        # macro first; micro breaks the frequent ties of a small validation set
        score = (vma, vmi) if vma is not None else (0.0, 0.0)
        if split.validation and score > best_f1:
            best, best_f1, stale, report.best_epoch = params, score, 0, epoch
        elif split.validation:
            stale += 1
        report.stopped_epoch = epoch
        if split.validation and stale >= cfg.early_stop_patience:
            break
    if not split.validation:
        best, report.best_epoch = params, report.stopped_epoch
    return best, report


# ---------------------------------------------------------------------------
# gradient checking


def checked_coordinates(params: ModelParams, batch: Sequence[QueryRecord]) -> dict[str, np.ndarray]:
    """Flat indices compared by :func:`grad_check`.

    Every coordinate of every group, except that only the embedding-table
    rows the batch actually touches are included (all other rows have zero
    gradient both analytically and numerically).
    """
    from .encoder import pooling_matrix

    out = {}
    for k, a in params.trainable().items():
        if k == "embedding_table":
            rows = np.unique(pooling_matrix(params.encoder, [r.text for r in batch]).indices)
            d = a.shape[1]
            out[k] = (rows[:, None] * d + np.arange(d)[None, :]).ravel()
        else:
            out[k] = np.arange(a.size)
    return out


def grad_errors(params: ModelParams, batch: Sequence[QueryRecord], t: Taxonomy, g: LabelGraph, cfg: TrainConfig, step: float = 1e-4, floor: float = 1e-6) -> dict[str, dict[str, float]]:
    """Per-group comparison of analytic and central-difference gradients.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    w = cfg.weights
    _, _, grads = loss_and_grads(params, g, batch, w)
    probe = params.copy()
    arrays = probe.trainable()
    out = {}
    for k, idx in checked_coordinates(probe, batch).items():
        flat = arrays[k].reshape(-1)
        analytic = grads[k].reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = batch_loss(probe, g, batch, w)
            flat[i] = orig - step
            down = batch_loss(probe, g, batch, w)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * step)
        diff = np.abs(analytic - numeric)
        rel = diff / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        out[k] = {"max_rel": float(rel.max()), "max_abs": float(diff.max()), "count": int(len(idx))}
    return out


def grad_check(params: ModelParams, batch: Sequence[QueryRecord], t: Taxonomy, g: LabelGraph, cfg: TrainConfig, step: float = 1e-4) -> float:
    """Maximum relative error between analytic and finite-difference gradients over all groups."""
    return max(v["max_rel"] for v in grad_errors(params, batch, t, g, cfg, step).values())
