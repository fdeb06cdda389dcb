"""Query records, TSV I/O, deterministic splits and a synthetic corpus generator."""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput, EmptyText, MalformedRow, UnknownLabel
from .taxonomy import Taxonomy, parse_taxonomy


@dataclass(frozen=True)
class QueryRecord:
    id: str
    text: str
    child_label: int | None = None

    @property
    def labeled(self) -> bool:
        return self.child_label is not None

    def with_label(self, child: int | None) -> "QueryRecord":
        return QueryRecord(self.id, self.text, child)


@dataclass
class CorpusSplit:
    train: list[QueryRecord]
    validation: list[QueryRecord]
    test: list[QueryRecord]
    unlabeled_pool: list[QueryRecord] = field(default_factory=list)

    def check_disjoint(self) -> None:
        seen: set[str] = set()
        for part in (self.train, self.validation, self.test, self.unlabeled_pool):
            ids = {r.id for r in part}
            if len(ids) != len(part) or ids & seen:
                raise ValueError("corpus split parts overlap")
            seen |= ids


def make_record(qid: str, text: str, label: str | None, t: Taxonomy, line: int | None = None) -> QueryRecord:
    where = f"line {line}: " if line is not None else ""
    if not text.strip():
        raise EmptyText(f"{where}query {qid!r} has empty text")
    child = None
    if label:
        try:
            child = t.id_of(label)
        except UnknownLabel:
            raise UnknownLabel(f"{where}label {label!r} is not in the taxonomy") from None
        if not t.is_child(child):
            raise UnknownLabel(f"{where}label {label!r} is a {t.kinds[child]}, queries must carry a child label")
    return QueryRecord(qid, text, child)


def parse_queries(lines: Sequence[str], t: Taxonomy) -> list[QueryRecord]:
    out = []
    for lineno, raw in enumerate(lines, 1):
        row = raw.rstrip("\r\n")
        if not row:
            continue
        cols = row.split("\t")
        if len(cols) == 2:
            cols.append("")
        if len(cols) != 3:
            raise MalformedRow(f"line {lineno}: expected 3 tab-separated columns, found {len(cols)}", line=lineno)
        out.append(make_record(cols[0], cols[1], cols[2].strip() or None, t, line=lineno))
    return out


def load_queries(path: str | Path, t: Taxonomy) -> list[QueryRecord]:
    """Read ``id<TAB>text<TAB>child_label`` rows; an empty label column means unlabeled."""
    with open(path, encoding="utf-8") as fh:
        return parse_queries(fh.readlines(), t)


def write_queries(path: str | Path, records: Sequence[QueryRecord], t: Taxonomy) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            label = t.names[r.child_label] if r.child_label is not None else ""
            fh.write(f"{r.id}\t{r.text}\t{label}\n")


def _boundaries(n: int, ratios: Sequence[float]) -> list[int]:
    tail = [int(math.floor(n * r + 0.5)) if r > 0 else 0 for r in ratios[1:]]
    tail = [max(1, k) if r > 0 else 0 for k, r in zip(tail, ratios[1:])]
    head = n - sum(tail)
    while head < (1 if ratios[0] > 0 else 0):
        j = int(np.argmax(tail))
        tail[j] -= 1
        head += 1
    return [0, head, head + tail[0], n]


def split(records: Sequence[QueryRecord], seed: int, ratios: Sequence[float] = (0.8, 0.1, 0.1)) -> CorpusSplit:
    """Shuffle by ``seed`` and slice into train/validation/test.

    When every class has at least three members the shuffled order is
    interleaved by class (each record keyed by its fractional position
    inside its class), so every contiguous slice keeps class proportions
    to within one record.
    """
    if not records:
        raise EmptyInput("no records to split")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(records)
    if n < sum(1 for r in ratios if r > 0):
        raise EmptyInput(f"{n} records cannot fill {sum(1 for r in ratios if r > 0)} non-empty splits")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)

    by_class: dict[int | None, list[int]] = {}
    for i in order:
        by_class.setdefault(records[i].child_label, []).append(int(i))
    if all(len(v) >= 3 for v in by_class.values()):
        class_rank = {c: k for k, c in enumerate(rng.permutation(len(by_class)))}
        keyed = []
        for ci, (c, members) in enumerate(by_class.items()):
            m = len(members)
            for pos, i in enumerate(members):
                keyed.append(((pos + 0.5) / m, class_rank[ci], i))
        keyed.sort()
        order = [i for _, _, i in keyed]
    else:
        order = [int(i) for i in order]

    cuts = _boundaries(n, ratios)
    parts = [[records[i] for i in order[cuts[k]:cuts[k + 1]]] for k in range(3)]
    return CorpusSplit(train=parts[0], validation=parts[1], test=parts[2])


def strip_labels(s: CorpusSplit, fraction: float, seed: int) -> CorpusSplit:
    """Move ``fraction`` of the labeled records (counted over all splits) out of train into the unlabeled pool."""
    total = len(s.train) + len(s.validation) + len(s.test)
    k = min(len(s.train), int(round(fraction * total)))
    if k <= 0:
        return s
    rng = np.random.default_rng(seed)
    picked = set(rng.choice(len(s.train), size=k, replace=False).tolist())
    train = [r for i, r in enumerate(s.train) if i not in picked]
    pool = [r.with_label(None) for i, r in enumerate(s.train) if i in picked]
    return CorpusSplit(train, s.validation, s.test, s.unlabeled_pool + pool)


# ---------------------------------------------------------------------------
# synthetic corpora

LETTERS = string.ascii_lowercase
VOCAB_PER_CLASS = 8
# token frequencies within a class fall off as 1/rank; labels are named after the top stems
ZIPF = 1.0 / np.arange(1, VOCAB_PER_CLASS + 1)
ZIPF = ZIPF / ZIPF.sum()


class SyntheticCorpus(NamedTuple):
    taxonomy: Taxonomy
    records: list[QueryRecord]
    truth: dict[str, int]  # gold child of every record, withheld or not
    typo_ids: frozenset[str]


def _stem(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        n = int(rng.integers(4, 8))
        s = "".join(LETTERS[i] for i in rng.integers(0, 26, size=n))
        if s not in used:
            used.add(s)
            return s


def typo(text: str, rng: np.random.Generator) -> str:
    """Apply one random single-character insert, delete or substitute."""
    while True:
        op = int(rng.integers(0, 3))
        if op == 0:
            pos = int(rng.integers(0, len(text) + 1))
            out = text[:pos] + LETTERS[int(rng.integers(0, 26))] + text[pos:]
        elif op == 1:
            if len(text) <= 1:
                continue
            pos = int(rng.integers(0, len(text)))
            out = text[:pos] + text[pos + 1:]
        else:
            pos = int(rng.integers(0, len(text)))
            choices = [c for c in LETTERS if c != text[pos]]
            out = text[:pos] + choices[int(rng.integers(0, len(choices)))] + text[pos + 1:]
        out = " ".join(out.split())
        if out and out != text:
            return out


def class_sizes(queries_per_child: int, children_per_parent: int, imbalance: float) -> list[int]:
    # round before ceil: 50 * 0.2 evaluates to 10.000000000000002
    return [max(1, math.ceil(round(queries_per_child * imbalance**k, 9))) for k in range(children_per_parent)]


def gen_synthetic(
    seed: int,
    parents: int,
    children_per_parent: int,
    queries_per_child: int,
    imbalance: float = 1.0,
    typo_rate: float = 0.0,
    unlabeled_fraction: float = 0.0,
) -> SyntheticCorpus:
    """Generate a two-level corpus with disjoint per-class vocabularies.

    Child labels are named after two of their own stems and parents after
    the lead stem of each child, so label text carries class evidence. A
    typo'd unlabeled query is a one-edit copy of a labeled query of the same
    class, which keeps it within edit distance 1 of a labeled neighbour.
    """
    if min(parents, children_per_parent, queries_per_child) < 1:
        raise ValueError("counts must be >= 1")
    if not 0 < imbalance <= 1:
        raise ValueError("imbalance must be in (0, 1]")
    if not (0 <= typo_rate <= 1 and 0 <= unlabeled_fraction <= 1):
        raise ValueError("probabilities must be in [0, 1]")
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    vocab: dict[tuple[int, int], list[str]] = {}
    lines = []
    for p in range(parents):
        kids = [[_stem(rng, used) for _ in range(VOCAB_PER_CLASS)] for _ in range(children_per_parent)]
        lines.append(" ".join(v[0] for v in kids) + (" group" if children_per_parent == 1 else ""))
        for k, v in enumerate(kids):
            vocab[p, k] = v
            lines.append("  " + f"{v[0]} {v[1]}")
    tax = parse_taxonomy("\n".join(lines))

    sizes = class_sizes(queries_per_child, children_per_parent, imbalance)
    records: list[QueryRecord] = []
    truth: dict[str, int] = {}
    typo_ids: set[str] = set()
    n = 0
    for p in range(parents):
        for k in range(children_per_parent):
            words = vocab[p, k]
            child = tax.id_of(f"{words[0]} {words[1]}")
            labeled_texts: list[str] = []
            pending: list[str] = []  # ids of unlabeled records awaiting a possible typo
            cls_records = []
            for _ in range(sizes[k]):
                n += 1
                qid = f"q{n:06d}"
                length = int(rng.integers(2, 6))
                text = " ".join(words[i] for i in rng.choice(len(words), size=length, p=ZIPF))
                withheld = rng.random() < unlabeled_fraction
                noisy = rng.random() < typo_rate
                if not withheld:
                    if noisy:
                        text = typo(text, rng)
                        typo_ids.add(qid)
                    labeled_texts.append(text)
                elif noisy:
                    pending.append(qid)
                cls_records.append(QueryRecord(qid, text, None if withheld else child))
                truth[qid] = child
            if labeled_texts:
                for i, r in enumerate(cls_records):
                    if r.id in pending:
                        src = labeled_texts[int(rng.integers(0, len(labeled_texts)))]
                        cls_records[i] = QueryRecord(r.id, typo(src, rng), None)
                        typo_ids.add(r.id)
            records.extend(cls_records)
    return SyntheticCorpus(tax, records, truth, frozenset(typo_ids))


def write_truth(path: str | Path, corpus: SyntheticCorpus) -> None:
    """Write ``id<TAB>child_label`` for every record whose label was withheld."""
    t = corpus.taxonomy
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.records:
            if r.child_label is None:
                fh.write(f"{r.id}\t{t.names[corpus.truth[r.id]]}\n")


def load_truth(path: str | Path, t: Taxonomy) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            row = raw.rstrip("\r\n")
            if not row:
                continue
            cols = row.split("\t")
            if len(cols) != 2:
                raise MalformedRow(f"line {lineno}: expected 2 columns in truth file", line=lineno)
            out[cols[0]] = t.id_of(cols[1])
    return out
