"""Tree, forest and small-DAG taxonomies.

Nodes are stored in source order and addressed by integer position; every
other module works on those positions and only maps back to names at the
I/O boundary.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    CycleDetected,
    DagUnsupported,
    DuplicateNode,
    EmptyTaxonomy,
    TaxonomyError,
    UnknownNode,
    UnknownParent,
)

SENTINEL = "ROOT"

NodeRef = Union[int, str]


class Kind(str, Enum):
    TREE = "tree"
    FOREST = "forest"
    DAG = "dag"


@dataclass(frozen=True)
class Taxonomy:
    names: tuple[str, ...]
    parents: tuple[tuple[int, ...], ...]
    children: tuple[tuple[int, ...], ...]
    roots: tuple[int, ...]
    topo_order: tuple[int, ...]
    kind: Kind
    index: Mapping[str, int] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def parent(self) -> tuple[int, ...]:
        """Single-parent view (-1 for roots); only defined off DAGs."""
        self.require_tree()
        return tuple(p[0] if p else -1 for p in self.parents)

    @property
    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) pairs, grouped by parent in node order."""
        return [(p, c) for p in range(self.n) for c in self.children[p]]

    @property
    def internal_nodes(self) -> list[int]:
        return [v for v in range(self.n) if self.children[v]]

    @property
    def is_tree_like(self) -> bool:
        return self.kind is not Kind.DAG

    def require_tree(self) -> None:
        if self.kind is Kind.DAG:
            raise DagUnsupported("operation requires a tree or forest taxonomy")

    def idx(self, node: NodeRef) -> int:
        if isinstance(node, (int, np.integer)):
            if not 0 <= int(node) < self.n:
                raise UnknownNode(f"node index {node} out of range")
            return int(node)
        try:
            return self.index[node]
        except KeyError:
            raise UnknownNode(f"unknown node {node!r}") from None

    def indices(self, nodes: Iterable[NodeRef]) -> set[int]:
        return {self.idx(v) for v in nodes}

    def descendants(self, node: NodeRef) -> set[int]:
        v = self.idx(node)
        out: set[int] = set()
        stack = list(self.children[v])
        while stack:
            u = stack.pop()
            if u not in out:
                out.add(u)
                stack.extend(self.children[u])
        return out

    def ancestors(self, node: NodeRef) -> set[int]:
        v = self.idx(node)
        out: set[int] = set()
        stack = list(self.parents[v])
        while stack:
            u = stack.pop()
            if u not in out:
                out.add(u)
                stack.extend(self.parents[u])
        return out

    def pairs(self) -> list[tuple[str, str]]:
        """(child, parent) records in node order; roots point at the sentinel."""
        out = []
        for v in range(self.n):
            if not self.parents[v]:
                out.append((self.names[v], SENTINEL))
            for p in self.parents[v]:
                out.append((self.names[v], self.names[p]))
        return out


def parse_taxonomy(
    source: Mapping[str, str] | Iterable[tuple[str, str]],
    sentinel: str = SENTINEL,
) -> Taxonomy:
    """Build a validated taxonomy from child->parent records.

    ``source`` is either a mapping ``{child: parent}`` or an iterable of
    ``(child, parent)`` pairs; the pair form allows several parents per child
    and therefore DAGs. Nodes whose parent is the sentinel become roots.
    """
    pairs = list(source.items()) if isinstance(source, Mapping) else [tuple(p) for p in source]
    if not pairs:
        raise EmptyTaxonomy("taxonomy has no nodes")

    names: list[str] = []
    index: dict[str, int] = {}
    raw_parents: list[list[str]] = []
    seen: set[tuple[str, str]] = set()
    for rec in pairs:
        if len(rec) != 2:
            raise TaxonomyError(f"expected (child, parent) record, got {rec!r}")
        child, par = (str(x).strip() for x in rec)
        if not child:
            raise TaxonomyError("empty node name")
        if child == sentinel:
            raise TaxonomyError(f"{sentinel!r} is reserved and cannot name a node")
        if (child, par) in seen:
            raise DuplicateNode(f"node {child!r} listed twice under {par!r}")
        seen.add((child, par))
        if child not in index:
            index[child] = len(names)
            names.append(child)
            raw_parents.append([])
        raw_parents[index[child]].append(par)

    parents: list[tuple[int, ...]] = []
    for child, plist in zip(names, raw_parents):
        if sentinel in plist:
            if len(plist) > 1:
                raise DuplicateNode(f"root node {child!r} also has parents {plist}")
            parents.append(())
            continue
        resolved = []
        for par in plist:
            if par not in index:
                raise UnknownParent(f"parent {par!r} of {child!r} is never defined")
            resolved.append(index[par])
        parents.append(tuple(resolved))
    return _build(tuple(names), tuple(parents), index)


def _build(names: tuple[str, ...], parents: tuple[tuple[int, ...], ...], index: Mapping[str, int]) -> Taxonomy:
    n = len(names)
    kids: list[list[int]] = [[] for _ in range(n)]
    for v in range(n):
        for p in parents[v]:
            if p == v:
                raise CycleDetected(f"node {names[v]!r} is its own parent")
            kids[p].append(v)
    roots = tuple(v for v in range(n) if not parents[v])

    indeg = [len(p) for p in parents]
    queue = deque(roots)
    order: list[int] = []
    while queue:
        v = queue.popleft()
        order.append(v)
        for c in kids[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if len(order) != n:
        stuck = sorted(names[v] for v in range(n) if indeg[v] > 0)
        raise CycleDetected(f"cycle through nodes {stuck}")

    if any(len(p) > 1 for p in parents):
        kind = Kind.DAG
    elif len(roots) == 1:
        kind = Kind.TREE
    else:
        kind = Kind.FOREST
    return Taxonomy(
        names=names,
        parents=parents,
        children=tuple(tuple(k) for k in kids),
        roots=roots,
        topo_order=tuple(order),
        kind=kind,
        index=dict(index),
    )


def from_parent_indices(parent: Sequence[int], names: Sequence[str] | None = None) -> Taxonomy:
    """Tree/forest from an index parent array (-1 marks a root)."""
    if len(parent) == 0:
        raise EmptyTaxonomy("taxonomy has no nodes")
    if names is None:
        names = [f"n{i}" for i in range(len(parent))]
    names = tuple(names)
    if len(set(names)) != len(names):
        raise DuplicateNode("node names must be unique")
    parents = tuple(() if p < 0 else (int(p),) for p in parent)
    return _build(names, parents, {s: i for i, s in enumerate(names)})


def is_upward_closed(t: Taxonomy, y) -> bool:
    y = np.asarray(y)
    return all(not (y[c] == 1 and y[p] != 1) for p, c in t.edges)


def upward_close(t: Taxonomy, y) -> np.ndarray:
    """Smallest upward-closed label vector that dominates ``y``.

    Works row-wise on a 2-D array of label vectors.
    """
    out = np.array(y, dtype=np.int8, copy=True)
    for v in reversed(t.topo_order):
        for p in t.parents[v]:
            out[..., p] |= out[..., v]
    return out


def descendants(t: Taxonomy, v: NodeRef) -> set[int]:
    return t.descendants(v)
