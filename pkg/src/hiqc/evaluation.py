"""Micro/Macro-F1 at child and parent level."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LengthMismatch
from .model import Prediction
from .taxonomy import Taxonomy


@dataclass
class ClassScore:
    label: str
    level: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalResult:
    child_micro_f1: float
    child_macro_f1: float
    parent_micro_f1: float
    parent_macro_f1: float
    n: int
    per_class: list[ClassScore] = field(default_factory=list)

    def headline(self) -> dict[str, float]:
        return {
            "child_micro_f1": self.child_micro_f1,
            "child_macro_f1": self.child_macro_f1,
            "parent_micro_f1": self.parent_micro_f1,
            "parent_macro_f1": self.parent_macro_f1,
        }

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("level\tlabel\tsupport\ttp\tfp\tfn\tprecision\trecall\tf1\n")
            for c in self.per_class:
                fh.write(f"{c.level}\t{c.label}\t{c.support}\t{c.tp}\t{c.fp}\t{c.fn}\t{c.precision:.6f}\t{c.recall:.6f}\t{c.f1:.6f}\n")


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def _f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    return p, r, _safe_div(2 * p * r, p + r)


def f1_from_counts(counts: Sequence[tuple[int, int, int]]) -> tuple[float, float]:
    """(micro, macro) F1 from per-class (TP, FP, FN); classes with nothing to score count as F1 = 0."""
    if not counts:
        return 0.0, 0.0
    tp, fp, fn = (sum(c[i] for c in counts) for i in range(3))
    micro = _f1(tp, fp, fn)[2]
    macro = float(np.mean([_f1(*c)[2] for c in counts]))
    return micro, macro


def confusion_counts(gold: Sequence[int], pred: Sequence[int], classes: Sequence[int]) -> list[tuple[int, int, int]]:
    g = np.asarray(gold)
    p = np.asarray(pred)
    out = []
    for c in classes:
        tp = int(np.sum((g == c) & (p == c)))
        fp = int(np.sum((g != c) & (p == c)))
        fn = int(np.sum((g == c) & (p != c)))
        out.append((tp, fp, fn))
    return out


def micro_macro_f1(gold: Sequence[int], pred: Sequence[Prediction | int], t: Taxonomy) -> EvalResult:
    """Score single-label predictions; parents are derived from the children."""
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold labels but {len(pred)} predictions")
    pred_child = [p.child if isinstance(p, Prediction) else int(p) for p in pred]
    gold_parent = [t.parent_of[int(c)] for c in gold]
    pred_parent = [t.parent_of[c] for c in pred_child]

    scores = []
    result = {}
    for level, g, p, classes in (
        ("child", gold, pred_child, t.children),
        ("parent", gold_parent, pred_parent, t.leaf_parents),
    ):
        counts = confusion_counts(g, p, classes)
        result[level] = f1_from_counts(counts)
        for c, (tp, fp, fn) in zip(classes, counts):
            prec, rec, f1 = _f1(tp, fp, fn)
            scores.append(ClassScore(t.names[c], level, tp, fp, fn, prec, rec, f1, tp + fn))
    return EvalResult(
        child_micro_f1=result["child"][0],
        child_macro_f1=result["child"][1],
        parent_micro_f1=result["parent"][0],
        parent_macro_f1=result["parent"][1],
        n=len(gold),
        per_class=scores,
    )
