"""Order and graph recovery metrics: DIV, SHD and SID."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .graph import DirectedAcyclicGraph, Order, ancestors, descendants


def _same_d(a: int, b: int):
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


def div(order: Order, g_true: DirectedAcyclicGraph) -> int:
    """Number of true edges that the order places backwards."""
    _same_d(len(order), g_true.d)
    inv = order.inverse
    return sum(inv[a] > inv[b] for a, b in g_true.edges)


def shd(g_est: DirectedAcyclicGraph, g_true: DirectedAcyclicGraph) -> int:
    """Node pairs whose edge status differs; a reversed edge counts once."""
    _same_d(g_est.d, g_true.d)
    count = 0
    for a in range(g_true.d):
        for b in range(a + 1, g_true.d):
            s_est = ((a, b) in g_est.edges, (b, a) in g_est.edges)
            s_true = ((a, b) in g_true.edges, (b, a) in g_true.edges)
            count += s_est != s_true
    return count


def d_separated(edges, x: int, y: int, z) -> bool:
    """Moralized-ancestral-graph test of ``x _||_ y | z`` in a DAG."""
    z = set(z)
    if x in z or y in z:
        return True
    parents: dict[int, set] = {}
    for a, b in edges:
        parents.setdefault(b, set()).add(a)
    anc = set()
    stack = [x, y, *z]
    while stack:
        v = stack.pop()
        if v in anc:
            continue
        anc.add(v)
        stack.extend(parents.get(v, ()))
    nbr: dict[int, set] = {v: set() for v in anc}
    for v in anc:
        pa = [p for p in parents.get(v, ()) if p in anc]
        for p in pa:
            nbr[v].add(p)
            nbr[p].add(v)
        for p in pa:
            for q in pa:
                if p != q:
                    nbr[p].add(q)
    seen = {x}
    stack = [x]
    while stack:
        v = stack.pop()
        for w in nbr[v]:
            if w in z or w in seen:
                continue
            if w == y:
                return False
            seen.add(w)
            stack.append(w)
    return True


def parent_adjustment_valid(g: DirectedAcyclicGraph, i: int, j: int, Z, desc=None, anc=None) -> bool:
    """Whether adjusting for ``Z`` identifies the effect of ``do(V_i)`` on ``V_j`` in ``g``.

    Generalized adjustment criterion: ``Z`` holds no descendant of a node on
    a proper causal path from ``i`` to ``j``, and d-separates ``i`` from
    ``j`` once the first edge of every such path is removed. If ``j`` is in
    ``Z`` the adjusted effect is null, which is correct iff ``j`` is not a
    descendant of ``i``.
    """
    desc = desc if desc is not None else [descendants(g, v) for v in range(g.d)]
    anc = anc if anc is not None else [ancestors(g, v) for v in range(g.d)]
    Z = set(Z)
    if j in Z:
        return j not in desc[i]
    if j in desc[i]:
        causal = (desc[i] & anc[j]) | {j}
    else:
        causal = set()
    forbidden = set()
    for w in causal:
        forbidden |= desc[w] | {w}
    if Z & forbidden:
        return False
    edges = {(a, b) for a, b in g.edges if not (a == i and b in causal)}
    return d_separated(edges, i, j, Z)


def sid(g_est: DirectedAcyclicGraph, g_true: DirectedAcyclicGraph) -> int:
    """Ordered pairs ``(i, j)`` whose interventional law is misjudged by ``g_est``'s parent sets."""
    _same_d(g_est.d, g_true.d)
    d = g_true.d
    desc = [descendants(g_true, v) for v in range(d)]
    anc = [ancestors(g_true, v) for v in range(d)]
    count = 0
    for i in range(d):
        Z = g_est.parents(i)
        for j in range(d):
            if j != i and not parent_adjustment_valid(g_true, i, j, Z, desc, anc):
                count += 1
    return count


@dataclass
class MetricReport:
    div: int
    shd: int
    sid: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.div, self.shd, self.sid) < 0:
            raise ValueError("metric counts must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(order: Order, g_est: DirectedAcyclicGraph, g_true: DirectedAcyclicGraph, **meta) -> MetricReport:
    return MetricReport(div(order, g_true), shd(g_est, g_true), sid(g_est, g_true), dict(meta))
