"""Directed acyclic graphs and variable orders.

Nodes are 0-based integers. An :class:`Order` ``perm`` lists nodes from first
to last; ``inverse[v]`` is the position of node ``v``.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class StructuralError(ValueError):
    """Invalid graph structure (cycle, self-loop, out-of-range node)."""


class CycleError(StructuralError):
    pass


def _kahn(d: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    children: list[list[int]] = [[] for _ in range(d)]
    indeg = [0] * d
    for a, b in edges:
        children[a].append(b)
        indeg[b] += 1
    heap = [v for v in range(d) if indeg[v] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        v = heapq.heappop(heap)
        out.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(out) != d:
        raise CycleError("graph contains a directed cycle")
    return out


@dataclass(frozen=True)
class DirectedAcyclicGraph:
    d: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.d) < 1:
            raise StructuralError("a graph needs at least one node")
        edges = list(self.edges)
        norm = set()
        for e in edges:
            a, b = int(e[0]), int(e[1])
            if not (0 <= a < self.d and 0 <= b < self.d):
                raise StructuralError(f"edge {e} out of range for d={self.d}")
            if a == b:
                raise StructuralError(f"self-loop on node {a}")
            if (a, b) in norm:
                raise StructuralError(f"duplicate edge {(a, b)}")
            norm.add((a, b))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "edges", frozenset(norm))
        _kahn(self.d, norm)

    @classmethod
    def from_edges(cls, d: int, edges: Iterable[Sequence[int]]) -> "DirectedAcyclicGraph":
        edges = [tuple(int(x) for x in e) for e in edges]
        if len(set(edges)) != len(edges):
            raise StructuralError("duplicate edge")
        return cls(d, frozenset(edges))

    @classmethod
    def from_adjacency(cls, adj) -> "DirectedAcyclicGraph":
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise StructuralError("adjacency matrix must be square")
        rows, cols = np.nonzero(adj)
        return cls(adj.shape[0], frozenset(zip(rows.tolist(), cols.tolist())))

    @property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.d, self.d), dtype=bool)
        for i, j in self.edges:
            a[i, j] = True
        return a

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def parents(self, i: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == i)

    def children(self, i: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == i)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def subgraph(self, nodes: Iterable[int]) -> set[tuple[int, int]]:
        keep = set(nodes)
        return {(a, b) for a, b in self.edges if a in keep and b in keep}


@dataclass(frozen=True)
class Order:
    perm: tuple
    inverse: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        perm = tuple(int(v) for v in self.perm)
        d = len(perm)
        if sorted(perm) != list(range(d)):
            raise StructuralError(f"{perm} is not a permutation of range({d})")
        inv = [0] * d
        for k, v in enumerate(perm):
            inv[v] = k
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "inverse", tuple(inv))

    def __len__(self):
        return len(self.perm)

    def __iter__(self):
        return iter(self.perm)

    def position(self, node: int) -> int:
        return self.inverse[node]

    def predecessors(self, node: int) -> list[int]:
        """Nodes placed before ``node``, in order."""
        return list(self.perm[: self.inverse[node]])

    def is_consistent_with(self, g: DirectedAcyclicGraph) -> bool:
        return all(self.inverse[a] < self.inverse[b] for a, b in g.edges)


def topological_order(g) -> Order:
    """Kahn's algorithm with ties broken by ascending node index.

    Accepts a :class:`DirectedAcyclicGraph` or a square adjacency matrix; a
    cyclic adjacency raises :class:`CycleError`.
    """
    if isinstance(g, DirectedAcyclicGraph):
        return Order(tuple(_kahn(g.d, g.edges)))
    adj = np.asarray(g)
    rows, cols = np.nonzero(adj)
    return Order(tuple(_kahn(adj.shape[0], zip(rows.tolist(), cols.tolist()))))


def _check_node(g: DirectedAcyclicGraph, i: int):
    if not 0 <= i < g.d:
        raise StructuralError(f"node {i} out of range for d={g.d}")


def descendants(g: DirectedAcyclicGraph, i: int) -> set[int]:
    _check_node(g, i)
    kids: dict[int, list[int]] = {}
    for a, b in g.edges:
        kids.setdefault(a, []).append(b)
    seen: set[int] = set()
    stack = [i]
    while stack:
        for c in kids.get(stack.pop(), ()):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return seen


def ancestors(g: DirectedAcyclicGraph, i: int) -> set[int]:
    _check_node(g, i)
    pars: dict[int, list[int]] = {}
    for a, b in g.edges:
        pars.setdefault(b, []).append(a)
    seen: set[int] = set()
    stack = [i]
    while stack:
        for p in pars.get(stack.pop(), ()):
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def sinks(edges: Iterable[tuple[int, int]], nodes: Iterable[int]) -> list[int]:
    """Nodes of ``nodes`` without children among ``edges``."""
    has_child = {a for a, _ in edges}
    return [v for v in nodes if v not in has_child]


def ancestral_sets(g: DirectedAcyclicGraph, limit: int | None = None):
    """Yield every nonempty ancestor-closed node set.

    These are exactly the prefix sets ``pi[1:m]`` over all orders of ``g``.
    """
    parents = [set(g.parents(i)) for i in range(g.d)]
    seen = set()
    frontier = [frozenset()]
    count = 0
    while frontier:
        nxt = []
        for s in frontier:
            for v in range(g.d):
                if v not in s and parents[v] <= s:
                    t = s | {v}
                    if t not in seen:
                        seen.add(t)
                        nxt.append(t)
                        yield t
                        count += 1
                        if limit is not None and count >= limit:
                            return
        frontier = nxt
