"""Category hierarchy and the normalized label graph built from it.

Taxonomy files hold one label per line. Top-level (parent) labels sit
flush-left; each nesting level is indented by two more spaces. Lines whose
first non-blank character is ``#`` are comments. Example::

    # sensitive query taxonomy
    harmful
      self-harm
      harm to others
    adult
      adult products
      adult content

Label ids are small integers: the synthetic root is 0, internal (parent)
labels come next in sorted name order, then leaf (child) labels in sorted
name order. A label's id is therefore also its row in the label graph.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DuplicateLabel, EmptyParent, EmptyTaxonomy, NotAChild, OrphanChild, UnknownLabel

ROOT_NAME = "<root>"
INDENT = 2


@dataclass(frozen=True)
class Taxonomy:
    """Immutable label tree with a synthetic root.

    ``kind`` is ``"root"``, ``"parent"`` (has children) or ``"child"`` (leaf).
    ``parent_of`` maps every non-root id to the id one level up; top-level
    parents map to the root.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    parent_of: dict[int, int]
    root_id: int = 0
    _by_name: dict[str, int] = field(default=None, repr=False, compare=False)
    _children: dict[int, tuple[int, ...]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {n: i for i, n in enumerate(self.names)})
        kids: dict[int, list[int]] = {i: [] for i in range(len(self.names))}
        for c, p in sorted(self.parent_of.items()):
            kids[p].append(c)
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in kids.items()})

    def __len__(self) -> int:
        return len(self.names)

    @property
    def parents(self) -> list[int]:
        """Internal labels (excluding the root) in id order."""
        return [i for i, k in enumerate(self.kinds) if k == "parent"]

    @property
    def children(self) -> list[int]:
        """Leaf labels in id order."""
        return [i for i, k in enumerate(self.kinds) if k == "child"]

    @property
    def leaf_parents(self) -> list[int]:
        """Parents that directly own at least one leaf. Equal to ``parents`` for two-level trees."""
        owners = {self.parent_of[c] for c in self.children}
        return [p for p in self.parents if p in owners]

    @property
    def head_labels(self) -> list[int]:
        """Labels the classifier scores: every node except the root, in id order."""
        return list(range(1, len(self.names)))

    @property
    def depth(self) -> int:
        return max((len(self.ancestors(c)) for c in self.children), default=0)

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownLabel(f"unknown label {name!r}") from None

    def name_of(self, label: int) -> str:
        self._check(label)
        return self.names[label]

    def kind_of(self, label: int) -> str:
        self._check(label)
        return self.kinds[label]

    def children_of(self, label: int) -> tuple[int, ...]:
        self._check(label)
        return self._children[label]

    def ancestors(self, label: int) -> list[int]:
        """Ids above ``label`` up to (not including) the root, nearest first."""
        self._check(label)
        out = []
        node = label
        while node != self.root_id:
            node = self.parent_of[node]
            if node != self.root_id:
                out.append(node)
        return out

    def is_child(self, label: int) -> bool:
        return 0 <= label < len(self.names) and self.kinds[label] == "child"

    def _check(self, label: int) -> None:
        if not isinstance(label, (int, np.integer)) or not 0 <= label < len(self.names):
            raise UnknownLabel(f"unknown label id {label!r}")

    def fingerprint(self) -> str:
        """Stable hash of names and structure, used to tie checkpoints to a taxonomy."""
        h = hashlib.sha256()
        for i, (n, k) in enumerate(zip(self.names, self.kinds)):
            h.update(f"{i}\t{n}\t{k}\t{self.parent_of.get(i, -1)}\n".encode())
        return h.hexdigest()

    def to_text(self) -> str:
        lines = []

        def walk(node, level):
            for c in sorted(self._children[node], key=lambda i: self.names[i]):
                lines.append(" " * (INDENT * level) + self.names[c])
                walk(c, level + 1)

        walk(self.root_id, 0)
        return "\n".join(lines) + "\n"


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse taxonomy text into a validated :class:`Taxonomy`."""
    parent_name: dict[str, str | None] = {}
    stack: list[str] = []  # stack[k] is the most recent label at nesting level k
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        body = raw.rstrip().replace("\t", " " * INDENT)
        indent = len(body) - len(body.lstrip(" "))
        level, rem = divmod(indent, INDENT)
        if rem or level > len(stack):
            raise OrphanChild(f"line {lineno}: {stripped!r} has no enclosing parent at this indentation")
        if stripped == ROOT_NAME:
            raise DuplicateLabel(f"line {lineno}: {ROOT_NAME!r} is reserved")
        if stripped in parent_name:
            raise DuplicateLabel(f"line {lineno}: label {stripped!r} appears more than once")
        del stack[level:]
        parent_name[stripped] = stack[-1] if stack else None
        stack.append(stripped)

    if not parent_name:
        raise EmptyTaxonomy("taxonomy contains no labels")
    has_kids = {p for p in parent_name.values() if p is not None}
    for name, p in parent_name.items():
        if p is None and name not in has_kids:
            raise EmptyParent(f"top-level label {name!r} has no children")

    parents = sorted(n for n in parent_name if n in has_kids)
    leaves = sorted(n for n in parent_name if n not in has_kids)
    names = (ROOT_NAME, *parents, *leaves)
    kinds = ("root", *["parent"] * len(parents), *["child"] * len(leaves))
    idx = {n: i for i, n in enumerate(names)}
    parent_of = {idx[n]: (idx[p] if p is not None else 0) for n, p in parent_name.items()}
    return Taxonomy(names=names, kinds=kinds, parent_of=parent_of)


def load_taxonomy(source: str | Path) -> Taxonomy:
    """Load a taxonomy from a file path."""
    return parse_taxonomy(Path(source).read_text(encoding="utf-8"))


def siblings(t: Taxonomy, child: int) -> set[int]:
    """Other leaves under the same parent as ``child`` (``child`` itself excluded)."""
    if t.kind_of(child) != "child":
        raise NotAChild(f"label {t.names[child]!r} is a {t.kinds[child]}, not a child")
    p = t.parent_of[child]
    return {c for c in t.children_of(p) if c != child and t.kinds[c] == "child"}


@dataclass(frozen=True)
class LabelGraph:
    taxonomy: Taxonomy
    node_order: tuple[int, ...]
    adjacency: np.ndarray

    @property
    def size(self) -> int:
        return len(self.node_order)


def build_label_graph(t: Taxonomy) -> LabelGraph:
    """Tree edges plus self-loops, symmetrically degree-normalized."""
    n = len(t)
    a = np.eye(n)
    for c, p in t.parent_of.items():
        a[c, p] = a[p, c] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    adj = d[:, None] * a * d[None, :]
    adj.setflags(write=False)
    return LabelGraph(taxonomy=t, node_order=tuple(range(n)), adjacency=adj)
