"""Timeliness graphs, directed cuts, compatibility and the named graph families.

Graphs are immutable values kept in a canonical form (sorted nodes, sorted
edges) so that equality, hashing and the total order on graphs all agree.
"""

from __future__ import annotations

import enum
import functools
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

#: Largest universe for which families are enumerated explicitly.
ENUMERATION_CAP = 5

FAMILY_NAMES = ("ASYNC", "COMPLETE", "STAR", "TREE", "RING", "SC", "BIC", "PAIR", "CUSTOM")


class StructuralError(ValueError):
    """A graph or cut that violates its structural invariants."""


class CapacityError(ValueError):
    """A request exceeding the explicit-enumeration cap."""


class Order(enum.IntEnum):
    LT = -1
    EQ = 0
    GT = 1


@dataclass(frozen=True)
class TimelinessGraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    nodeset: frozenset = field(init=False, repr=False, compare=False, hash=False)
    edgeset: frozenset = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodeset", frozenset(self.nodes))
        object.__setattr__(self, "edgeset", frozenset(self.edges))

    @property
    def key(self):
        """Sort key realizing the total order on graphs."""
        return (self.nodes, self.edges)

    def successors(self, p: int) -> list[int]:
        return [b for (a, b) in self.edges if a == p]

    def predecessors(self, p: int) -> list[int]:
        return [a for (a, b) in self.edges if b == p]

    def __str__(self):
        return format_graph(self)


def make_graph(nodes: Iterable[int], edges: Iterable[tuple[int, int]] = ()) -> TimelinessGraph:
    """Build a canonical graph, rejecting dangling endpoints and self-loops."""
    ns = set(int(v) for v in nodes)
    es = set((int(a), int(b)) for a, b in edges)
    for a, b in es:
        if a == b:
            raise StructuralError(f"self-loop on node {a}")
        if a not in ns or b not in ns:
            raise StructuralError(f"edge ({a},{b}) has an endpoint outside the node set")
    if any(v < 0 for v in ns):
        raise StructuralError("process ids must be non-negative")
    return TimelinessGraph(tuple(sorted(ns)), tuple(sorted(es)))


def induced_subgraph(g: TimelinessGraph, m: Iterable[int]) -> TimelinessGraph:
    keep = g.nodeset & set(m)
    return TimelinessGraph(
        tuple(sorted(keep)),
        tuple(e for e in g.edges if e[0] in keep and e[1] in keep),
    )


@dataclass(frozen=True)
class Dicut:
    x_side: frozenset
    y_side: frozenset

    @classmethod
    def of(cls, x: Iterable[int], y: Iterable[int]) -> "Dicut":
        return cls(frozenset(x), frozenset(y))


def is_dicut(g: TimelinessGraph, d: Dicut) -> bool:
    if d.x_side & d.y_side or (d.x_side | d.y_side) != g.nodeset:
        raise StructuralError("dicut sides must partition the node set of the graph")
    return not any(a in d.y_side and b in d.x_side for a, b in g.edges)


def _check_cap(n: int):
    if n > ENUMERATION_CAP:
        raise CapacityError(f"n={n} exceeds the enumeration cap {ENUMERATION_CAP}")


def dicuts(g: TimelinessGraph) -> Iterator[Dicut]:
    """All dicuts of g with both sides nonempty."""
    _check_cap(len(g.nodes))
    nodes = g.nodes
    for r in range(1, len(nodes)):
        for xs in itertools.combinations(nodes, r):
            d = Dicut(frozenset(xs), g.nodeset - frozenset(xs))
            if is_dicut(g, d):
                yield d


def dicut_reductions(g: TimelinessGraph) -> list[TimelinessGraph]:
    reduced = {induced_subgraph(g, d.x_side) for d in dicuts(g)}
    return sorted(reduced, key=lambda h: h.key)


def is_compatible(g: TimelinessGraph, h: TimelinessGraph) -> bool:
    return g.nodeset == h.nodeset and g.edgeset <= h.edgeset


def graph_order(g: TimelinessGraph, h: TimelinessGraph) -> Order:
    if g.key < h.key:
        return Order.LT
    if g.key > h.key:
        return Order.GT
    return Order.EQ


def reachable_from(g: TimelinessGraph, p: int) -> set[int]:
    seen = {p}
    stack = [p]
    adj: dict[int, list[int]] = {}
    for a, b in g.edges:
        adj.setdefault(a, []).append(b)
    while stack:
        v = stack.pop()
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def root_of(g: TimelinessGraph) -> Optional[int]:
    """Smallest node from which every node of g is reachable, or None."""
    for p in g.nodes:
        if len(reachable_from(g, p)) == len(g.nodes):
            return p
    return None


# -- graph text form -------------------------------------------------------

def format_graph(g: Optional[TimelinessGraph]) -> Optional[str]:
    if g is None:
        return None
    return _format_cached(g)


@functools.lru_cache(maxsize=None)
def _format_cached(g: TimelinessGraph) -> str:
    nodes = ",".join(str(v) for v in g.nodes)
    edges = ",".join(f"({a},{b})" for a, b in g.edges)
    return f"nodes:[{nodes}];edges:[{edges}]"


_GRAPH_RE = re.compile(r"^nodes:\[([0-9,\s]*)\];edges:\[((?:\(\s*\d+\s*,\s*\d+\s*\)\s*,?\s*)*)\]$")
_EDGE_RE = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)")


def parse_graph(text: str) -> TimelinessGraph:
    m = _GRAPH_RE.match(text.strip())
    if not m:
        raise StructuralError(f"malformed graph text: {text!r}")
    nodes = [int(v) for v in m.group(1).split(",") if v.strip()]
    edges = [(int(a), int(b)) for a, b in _EDGE_RE.findall(m.group(2))]
    return make_graph(nodes, edges)


# -- families --------------------------------------------------------------

@dataclass(frozen=True)
class GraphFamily:
    name: str
    n: int
    members: tuple[TimelinessGraph, ...]
    index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.name not in FAMILY_NAMES:
            raise StructuralError(f"unknown family {self.name!r}")
        for a, b in zip(self.members, self.members[1:]):
            if not a.key < b.key:
                raise StructuralError("family members must be strictly increasing in graph order")
        for g in self.members:
            if g.nodes and (g.nodes[0] < 0 or g.nodes[-1] >= self.n):
                raise StructuralError(f"member {format_graph(g)} leaves the universe 0..{self.n - 1}")
        object.__setattr__(self, "index", {g: i for i, g in enumerate(self.members)})

    def __len__(self):
        return len(self.members)

    def __contains__(self, g):
        return g in self.index

    @classmethod
    def custom(cls, n: int, members: Iterable[TimelinessGraph]) -> "GraphFamily":
        return cls("CUSTOM", n, tuple(sorted(set(members), key=lambda g: g.key)))


def _subsets(n: int, min_size: int = 1) -> Iterator[tuple[int, ...]]:
    for k in range(min_size, n + 1):
        yield from itertools.combinations(range(n), k)


def _all_pairs(nodes):
    return [(a, b) for a in nodes for b in nodes if a != b]


def _strongly_connected_edge_sets(nodes: tuple[int, ...], two_edge: bool = False):
    """Sorted edge tuples over `nodes` giving a strongly connected graph.

    Every edge subset is scanned at once as a vector of bitmasks. With
    `two_edge`, the graph must also survive the deletion of any one edge.
    """
    k = len(nodes)
    if k == 1:
        yield ()
        return
    cand = _all_pairs(nodes)  # already in sorted order
    masks = np.arange(1 << len(cand), dtype=np.int64)
    ok = _sc_vector(masks, cand, nodes)
    if two_edge:
        for j in range(len(cand)):
            has = ((masks >> j) & 1) == 1
            ok &= ~has | _sc_vector(masks & ~(1 << j), cand, nodes)
    for mask in masks[ok].tolist():
        yield tuple(e for j, e in enumerate(cand) if mask >> j & 1)


def _sc_vector(masks, cand, nodes):
    k = len(nodes)
    pos = {v: i for i, v in enumerate(nodes)}
    out = [np.zeros_like(masks) for _ in range(k)]
    inn = [np.zeros_like(masks) for _ in range(k)]
    for j, (a, b) in enumerate(cand):
        bit = (masks >> j) & 1
        out[pos[a]] |= bit << pos[b]
        inn[pos[b]] |= bit << pos[a]
    full = (1 << k) - 1
    return (_closure(out, k, masks) == full) & (_closure(inn, k, masks) == full)


def _closure(adj, k, masks):
    seen = np.ones_like(masks)
    for _ in range(k):
        nxt = seen.copy()
        for i in range(k):
            nxt |= np.where((seen >> i) & 1 == 1, adj[i], 0)
        seen = nxt
    return seen


def _ring_members(nodes):
    first, rest = nodes[0], nodes[1:]
    for perm in itertools.permutations(rest):
        cyc = (first,) + perm
        yield [(cyc[i], cyc[(i + 1) % len(cyc)]) for i in range(len(cyc))]


def _tree_members(nodes):
    # every non-root picks a parent; keep assignments where all nodes reach the root
    for root in nodes:
        others = [v for v in nodes if v != root]
        for parents in itertools.product(nodes, repeat=len(others)):
            par = dict(zip(others, parents))
            if any(v == p for v, p in par.items()):
                continue
            ok = True
            for v in others:
                seen = set()
                while v != root:
                    if v in seen:
                        ok = False
                        break
                    seen.add(v)
                    v = par[v]
                if not ok:
                    break
            if ok:
                yield [(p, v) for v, p in par.items()]


def _generate(name: str, n: int) -> Iterator[TimelinessGraph]:
    if name == "ASYNC":
        for s in _subsets(n):
            yield make_graph(s)
    elif name == "COMPLETE":
        for s in _subsets(n):
            yield make_graph(s, _all_pairs(s))
    elif name == "STAR":
        for s in _subsets(n):
            for c in s:
                yield make_graph(s, [(c, q) for q in s if q != c])
    elif name == "TREE":
        for s in _subsets(n):
            for es in _tree_members(s):
                yield make_graph(s, es)
    elif name == "RING":
        for s in _subsets(n, 2):
            for es in _ring_members(s):
                yield make_graph(s, es)
    elif name in ("SC", "BIC"):
        for s in _subsets(n):
            for es in _strongly_connected_edge_sets(s, two_edge=name == "BIC"):
                yield TimelinessGraph(s, es)
    elif name == "PAIR":
        for s in _subsets(n, 2):
            for a, b in itertools.combinations(s, 2):
                yield make_graph(s, [(a, b), (b, a)])
    else:
        raise StructuralError(f"family {name!r} cannot be generated")


@functools.lru_cache(maxsize=None)
def generate_family(name: str, n: int) -> GraphFamily:
    """Enumerate a named family over node subsets of 0..n-1.

    BIC is read as 2-edge strong connectivity: the graph stays strongly
    connected after deleting any single edge.
    """
    name = name.upper()
    if n < 1:
        raise StructuralError("n must be at least 1")
    _check_cap(n)
    members = sorted(set(_generate(name, n)), key=lambda g: g.key)
    return GraphFamily(name, n, tuple(members))


@dataclass(frozen=True)
class ClosureWitness:
    member: TimelinessGraph
    dicut: Dicut
    reduced: TimelinessGraph


def closure_violations(f: GraphFamily) -> Iterator[ClosureWitness]:
    for g in f.members:
        for d in dicuts(g):
            r = induced_subgraph(g, d.x_side)
            if r not in f:
                yield ClosureWitness(g, d, r)


def is_dicut_closed(f: GraphFamily) -> tuple[bool, Optional[ClosureWitness]]:
    for w in closure_violations(f):
        return False, w
    return True, None
