"""Training objectives.

All losses are in minimized form. The ``*_grad`` variants return the loss
value together with its gradient with respect to the input array (probs
for the classification loss, fused embeddings for the contrastive ones).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UnknownLabel
from .taxonomy import Taxonomy, siblings

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0  # sibling term
    w_intra: float = 0.9
    w_contrastive: float = 0.1
    tau: float = 0.5
    literal_contrastive: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not (0 <= self.w_intra <= 1 and 0 <= self.w_contrastive <= 1):
            raise ValueError("w_intra and w_contrastive must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


def target_matrix(gold: Sequence[int], t: Taxonomy) -> tuple[np.ndarray, np.ndarray]:
    """Targets and sibling masks over head columns.

    The target marks the gold child and every ancestor below the root; the
    mask marks the gold child's siblings.
    """
    n = len(t) - 1
    y = np.zeros((len(gold), n))
    sib = np.zeros((len(gold), n))
    for i, c in enumerate(gold):
        if not t.is_child(int(c)):
            raise UnknownLabel(f"gold label {c!r} is not a child label")
        y[i, int(c) - 1] = 1.0
        for a in t.ancestors(int(c)):
            y[i, a - 1] = 1.0
        for s in siblings(t, int(c)):
            sib[i, s - 1] = 1.0
    return y, sib


def classification_loss_grad(probs: np.ndarray, gold: Sequence[int], t: Taxonomy, w: LossWeights) -> tuple[float, np.ndarray]:
    probs = np.atleast_2d(probs)
    y, sib = target_matrix(gold, t)
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    b = len(probs)
    per_row = -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum(axis=1) - w.lam * (sib * np.log(p)).sum(axis=1)
    grad = (-(y / p) + (1 - y) / (1 - p) - w.lam * sib / p) * inside / b
    return float(per_row.mean()), grad


def classification_loss(probs: np.ndarray, gold: Sequence[int], t: Taxonomy, w: LossWeights) -> float:
    """Batch mean of per-label BCE minus ``lam`` times the log-probability of the gold child's siblings."""
    return classification_loss_grad(probs, gold, t, w)[0]


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    return x / norms, norms


def _contrastive_grad(emb: np.ndarray, pos_mask: np.ndarray, neg_mask: np.ndarray, tau: float, literal: bool) -> tuple[float, np.ndarray]:
    """Single-positive normalized-temperature loss averaged over valid anchors.

    Each anchor pairs with its first positive in batch order. ``literal``
    swaps roles so the negatives' similarity sits in the numerator.
    """
    b = len(emb)
    n, norms = _normalize_rows(emb)
    sim = n @ n.T
    d_sim = np.zeros_like(sim)
    total = 0.0
    anchors = 0
    for a in range(b):
        pos = np.flatnonzero(pos_mask[a])
        neg = np.flatnonzero(neg_mask[a])
        if len(pos) == 0 or len(neg) == 0:
            continue
        anchors += 1
        p = pos[0]
        s_pos = sim[a, p] / tau
        s_neg = sim[a, neg] / tau
        if not literal:
            logits = np.concatenate([[s_pos], s_neg])
            m = logits.max()
            lse = m + np.log(np.exp(logits - m).sum())
            total += lse - s_pos
            soft = np.exp(logits - lse)
            d_sim[a, p] += (soft[0] - 1.0) / tau
            d_sim[a, neg] += soft[1:] / tau
        else:
            m = s_neg.max()
            lse = m + np.log(np.exp(s_neg - m).sum())
            total += s_pos - lse
            d_sim[a, p] += 1.0 / tau
            d_sim[a, neg] -= np.exp(s_neg - lse) / tau
    if anchors == 0:
        return 0.0, np.zeros_like(emb)
    d_sim /= anchors
    d_n = (d_sim + d_sim.T) @ n
    d_emb = (d_n - n * (d_n * n).sum(axis=1, keepdims=True)) / norms
    return total / anchors, d_emb


def _masks(child: Sequence[int], parent: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = np.asarray(child)
    p = np.asarray(parent)
    same_c = c[:, None] == c[None, :]
    same_p = p[:, None] == p[None, :]
    np.fill_diagonal(same_c, False)
    return same_c, same_p & ~same_c & ~np.eye(len(c), dtype=bool), ~same_p


def intra_class_loss_grad(emb, child, parent, tau=0.5, literal=False):
    same_c, sibling, _ = _masks(child, parent)
    return _contrastive_grad(np.asarray(emb, dtype=float), same_c, sibling, tau, literal)


def inter_class_loss_grad(emb, child, parent, tau=0.5, literal=False):
    _, sibling, other_p = _masks(child, parent)
    return _contrastive_grad(np.asarray(emb, dtype=float), sibling, other_p, tau, literal)


def intra_class_loss(emb, child, parent, tau=0.5, literal=False) -> float:
    """Positives share the child label; negatives share only the parent."""
    return intra_class_loss_grad(emb, child, parent, tau, literal)[0]


def inter_class_loss(emb, child, parent, tau=0.5, literal=False) -> float:
    """Positives share the parent but not the child; negatives have another parent."""
    return inter_class_loss_grad(emb, child, parent, tau, literal)[0]


def combined_loss(cls: float, intra: float, inter: float, w: LossWeights) -> float:
    contrastive = w.w_intra * intra + (1.0 - w.w_intra) * inter
    return w.w_contrastive * contrastive + (1.0 - w.w_contrastive) * cls
