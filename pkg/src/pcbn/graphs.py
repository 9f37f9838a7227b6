"""Directed acyclic graphs, undirected graphs and chain graphs.

Vertex labels are strings.  Wherever a deterministic order is needed the
lexicographic order of the labels is used.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from functools import lru_cache
from math import comb
from typing import Iterable, Iterator, Mapping, Sequence

from .exceptions import InputFormatError, StructureError


def _labels(vs: Iterable) -> tuple[str, ...]:
    return tuple(sorted({str(v) for v in vs}))


class Dag:
    """A directed acyclic graph with a total order on every parent set.

    Parameters
    ----------
    vertices : iterable of str
    edges : iterable of (parent, child) pairs
    orderings : mapping, optional
        ``orderings[v]`` lists the parents of ``v`` in increasing order.  Missing
        entries default to label order.
    """

    def __init__(self, vertices: Iterable, edges: Iterable[Sequence], orderings: Mapping | None = None):
        self.vertices = _labels(vertices)
        vset = set(self.vertices)
        pa: dict[str, set] = {v: set() for v in self.vertices}
        for e in edges:
            if len(e) != 2:
                raise StructureError(f"edge must be a pair, got {e!r}")
            w, v = str(e[0]), str(e[1])
            if w not in vset or v not in vset:
                raise StructureError(f"edge {w}->{v} uses an unknown vertex")
            if w == v:
                raise StructureError(f"self loop at {v}")
            pa[v].add(w)
        orderings = dict(orderings or {})
        self._parents: dict[str, tuple[str, ...]] = {}
        for v in self.vertices:
            if v in orderings and orderings[v] is not None:
                order = tuple(str(x) for x in orderings[v])
                if sorted(order) != sorted(pa[v]) or len(set(order)) != len(order):
                    raise StructureError(f"ordering for {v} must list exactly its parents {sorted(pa[v])}")
                self._parents[v] = order
            else:
                self._parents[v] = tuple(sorted(pa[v]))
        for v in orderings:
            if str(v) not in vset:
                raise StructureError(f"ordering given for unknown vertex {v}")
        self._children = {v: tuple(sorted(c for c in self.vertices if v in pa[c])) for v in self.vertices}
        self._order = _topological(self.vertices, self._parents)
        self._pos = {v: i for i, v in enumerate(self._order)}

    # -- basic accessors -------------------------------------------------
    def parents(self, v: str) -> tuple[str, ...]:
        """Parents of ``v`` in increasing parent order."""
        return self._parents[v]

    def children(self, v: str) -> tuple[str, ...]:
        return self._children[v]

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        """All edges as ``(parent, child)`` pairs in label order."""
        return tuple(sorted((w, v) for v in self.vertices for w in self._parents[v]))

    @property
    def orderings(self) -> dict[str, tuple[str, ...]]:
        return {v: self._parents[v] for v in self.vertices}

    def parents_before(self, v: str, w: str) -> tuple[str, ...]:
        """Parents of ``v`` that precede ``w`` in the parent order of ``v``."""
        order = self._parents[v]
        return order[: order.index(w)]

    def has_edge(self, w: str, v: str) -> bool:
        return w in self._parents[v]

    def adjacent(self, a: str, b: str) -> bool:
        return a in self._parents[b] or b in self._parents[a]

    def well_order(self) -> tuple[str, ...]:
        """Topological order, ties broken by label."""
        return self._order

    def position(self, v: str) -> int:
        return self._pos[v]

    def with_orderings(self, orderings: Mapping) -> "Dag":
        merged = dict(self.orderings)
        merged.update(orderings)
        return Dag(self.vertices, self.edges, merged)

    def induced(self, keep: Iterable[str]) -> "Dag":
        keep = set(keep)
        edges = [(w, v) for (w, v) in self.edges if w in keep and v in keep]
        orders = {v: [w for w in self._parents[v] if w in keep] for v in keep}
        return Dag(keep, edges, orders)

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [list(e) for e in self.edges],
            "orderings": {v: list(self._parents[v]) for v in self.vertices if self._parents[v]},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Dag":
        if not isinstance(d, Mapping) or "vertices" not in d or "edges" not in d:
            raise InputFormatError("DAG object needs 'vertices' and 'edges'")
        try:
            return cls(d["vertices"], [tuple(e) for e in d["edges"]], d.get("orderings"))
        except TypeError as exc:
            raise InputFormatError(f"malformed DAG object: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Dag":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"invalid JSON: {exc}") from None

    def __eq__(self, other):
        return isinstance(other, Dag) and self.vertices == other.vertices and \
            self.orderings == other.orderings

    def __hash__(self):
        return hash((self.vertices, tuple(sorted(self.orderings.items()))))

    def __repr__(self):
        es = ", ".join(f"{w}->{v}" for w, v in self.edges)
        return f"Dag([{es}])"


def _topological(vertices, parents) -> tuple[str, ...]:
    indeg = {v: len(parents[v]) for v in vertices}
    children = {v: [] for v in vertices}
    for v in vertices:
        for w in parents[v]:
            children[w].append(v)
    import heapq

    heap = [v for v in vertices if indeg[v] == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        v = heapq.heappop(heap)
        out.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(out) != len(vertices):
        raise StructureError("graph contains a directed cycle")
    return tuple(out)


def well_ordering(d: Dag) -> tuple[str, ...]:
    """A well-ordering of ``d``: a topological order with label tie-breaks."""
    return d.well_order()


class UGraph:
    """An undirected simple graph."""

    def __init__(self, vertices: Iterable, edges: Iterable[Sequence] = ()):
        self.vertices = _labels(vertices)
        self._adj: dict[str, set] = {v: set() for v in self.vertices}
        for a, b in edges:
            self.add_edge(a, b)

    def add_edge(self, a, b):
        a, b = str(a), str(b)
        if a == b:
            raise StructureError("self loop in undirected graph")
        self._adj[a].add(b)
        self._adj[b].add(a)

    def remove_edge(self, a, b):
        self._adj[a].discard(b)
        self._adj[b].discard(a)

    def neighbors(self, v) -> tuple[str, ...]:
        return tuple(sorted(self._adj[v]))

    def adjacent(self, a, b) -> bool:
        return b in self._adj[a]

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return tuple(sorted((a, b) for a in self.vertices for b in self._adj[a] if a < b))

    def copy(self) -> "UGraph":
        return UGraph(self.vertices, self.edges)

    def __eq__(self, other):
        return isinstance(other, UGraph) and self.vertices == other.vertices and self.edges == other.edges

    def __repr__(self):
        return "UGraph([" + ", ".join(f"{a}-{b}" for a, b in self.edges) + "])"


class ChainGraph:
    """A graph with directed and undirected edges and no directed cycles.

    Parameters
    ----------
    vertices : iterable of str
    directed : iterable of (a, b) pairs meaning ``a -> b``
    undirected : iterable of pairs
    """

    def __init__(self, vertices: Iterable, directed: Iterable = (), undirected: Iterable = ()):
        self.vertices = _labels(vertices)
        self.directed: frozenset = frozenset((str(a), str(b)) for a, b in directed)
        self.undirected: frozenset = frozenset(frozenset((str(a), str(b))) for a, b in undirected)
        for a, b in self.directed:
            if frozenset((a, b)) in self.undirected or (b, a) in self.directed:
                raise StructureError(f"conflicting edges between {a} and {b}")

    def adjacent(self, a, b) -> bool:
        return (a, b) in self.directed or (b, a) in self.directed or frozenset((a, b)) in self.undirected

    def edge_type(self, a, b) -> str | None:
        """``'->'``, ``'<-'``, ``'-'`` or ``None`` for the pair ``(a, b)``."""
        if (a, b) in self.directed:
            return "->"
        if (b, a) in self.directed:
            return "<-"
        if frozenset((a, b)) in self.undirected:
            return "-"
        return None

    def skeleton(self) -> frozenset:
        return frozenset({frozenset(e) for e in self.directed} | set(self.undirected))

    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "directed": [list(e) for e in sorted(self.directed)],
            "undirected": [sorted(e) for e in sorted(self.undirected, key=sorted)],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ChainGraph":
        return cls(d["vertices"], [tuple(e) for e in d.get("directed", ())],
                   [tuple(e) for e in d.get("undirected", ())])

    def __eq__(self, other):
        return isinstance(other, ChainGraph) and self.vertices == other.vertices and \
            self.directed == other.directed and self.undirected == other.undirected

    def __hash__(self):
        return hash((self.vertices, self.directed, self.undirected))

    def __repr__(self):
        parts = [f"{a}->{b}" for a, b in sorted(self.directed)]
        parts += ["-".join(sorted(e)) for e in sorted(self.undirected, key=sorted)]
        return "ChainGraph([" + ", ".join(parts) + "])"


def dag_as_chain_graph(d: Dag) -> ChainGraph:
    return ChainGraph(d.vertices, d.edges, ())


# ---------------------------------------------------------------------------
# Separation


def ancestral_set(d: Dag, subset: Iterable[str]) -> frozenset:
    """Smallest ancestral set containing ``subset``."""
    out = set()
    stack = [str(v) for v in subset]
    while stack:
        v = stack.pop()
        if v not in out:
            out.add(v)
            stack.extend(d.parents(v))
    return frozenset(out)


def moral_graph(d: Dag, subset: Iterable[str] | None = None) -> UGraph:
    """Moral graph of ``d``, or of the subgraph induced by ``subset``."""
    keep = set(d.vertices) if subset is None else set(subset)
    g = UGraph(keep)
    for v in keep:
        pa = [w for w in d.parents(v) if w in keep]
        for w in pa:
            g.add_edge(w, v)
        for a, b in itertools.combinations(pa, 2):
            g.add_edge(a, b)
    return g


def separated(g: UGraph, i: Iterable[str], j: Iterable[str], k: Iterable[str] = ()) -> bool:
    """Whether ``k`` separates ``i`` from ``j`` in an undirected graph.

    Sets that overlap are never separated.  An empty ``i`` or ``j`` is
    separated from anything.
    """
    i, j, k = set(i), set(j), set(k)
    if i & j:
        return False
    if not i or not j:
        return True
    seen = set(i - k)
    queue = deque(seen)
    while queue:
        v = queue.popleft()
        if v in j:
            return False
        for w in g._adj[v]:
            if w not in seen and w not in k:
                seen.add(w)
                queue.append(w)
    return True


def d_separated(d: Dag, i: Iterable[str], j: Iterable[str], k: Iterable[str] = ()) -> bool:
    """d-separation via the moral graph of the smallest ancestral set."""
    i, j, k = set(i), set(j), set(k)
    an = ancestral_set(d, i | j | k)
    return separated(moral_graph(d, an), i, j, k)


# ---------------------------------------------------------------------------
# Markov equivalence


def skeleton(d: Dag | ChainGraph) -> frozenset:
    if isinstance(d, Dag):
        return frozenset(frozenset(e) for e in d.edges)
    return d.skeleton()


def v_structures(d: Dag) -> frozenset:
    """Triples ``(a, c, b)`` with ``a -> c <- b``, ``a < b`` and ``a, b`` non-adjacent."""
    out = set()
    for c in d.vertices:
        for a, b in itertools.combinations(sorted(d.parents(c)), 2):
            if not d.adjacent(a, b):
                out.add((a, c, b))
    return frozenset(out)


def markov_equivalent(d1: Dag, d2: Dag) -> bool:
    """Same skeleton and same v-structures."""
    return d1.vertices == d2.vertices and skeleton(d1) == skeleton(d2) and \
        v_structures(d1) == v_structures(d2)


def _partially_directed_cycle_edges(vertices, directed, undirected) -> set:
    """Directed edges lying on a cycle that may also use undirected edges."""
    succ = {v: set() for v in vertices}
    for a, b in directed:
        succ[a].add(b)
    for e in undirected:
        a, b = tuple(e)
        succ[a].add(b)
        succ[b].add(a)
    comp = _scc(vertices, succ)
    return {(a, b) for a, b in directed if comp[a] == comp[b]}


def _scc(vertices, succ) -> dict:
    # Tarjan, iterative
    index, low, comp = {}, {}, {}
    stack, on = [], set()
    counter = [0]
    ncomp = 0
    for root in vertices:
        if root in index:
            continue
        work = [(root, iter(sorted(succ[root])))]
        index[root] = low[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on.add(w)
                    work.append((w, iter(sorted(succ[w]))))
                    advanced = True
                    break
                elif w in on:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on.discard(w)
                    comp[w] = ncomp
                    if w == v:
                        break
                ncomp += 1
    return comp


def is_chain_graph(g: ChainGraph) -> bool:
    """True when ``g`` has no partially directed cycle."""
    return not _partially_directed_cycle_edges(g.vertices, g.directed, g.undirected)


def meek_rules(g: ChainGraph) -> ChainGraph:
    """Apply orientation rules R1 to R3 until nothing changes.

    R1: ``i -> j - k`` with ``i, k`` non-adjacent gives ``j -> k``.
    R2: ``i -> k -> j`` with ``i - j`` gives ``i -> j``.
    R3: ``i - k -> j`` and ``i - l -> j`` with ``k, l`` non-adjacent gives ``i -> j``.
    """
    vs = g.vertices
    directed = set(g.directed)
    undirected = set(g.undirected)

    def adj(a, b):
        return (a, b) in directed or (b, a) in directed or frozenset((a, b)) in undirected

    def und(a, b):
        return frozenset((a, b)) in undirected

    changed = True
    while changed:
        changed = False
        for e in sorted(undirected, key=sorted):
            if e not in undirected:
                continue
            a, b = sorted(e)
            for j, k in ((a, b), (b, a)):
                # R1
                if any((i, j) in directed and not adj(i, k) and i != k for i in vs):
                    undirected.discard(e)
                    directed.add((j, k))
                    changed = True
                    break
                # R2 (here the edge is j - k, oriented j -> k)
                if any((j, m) in directed and (m, k) in directed for m in vs):
                    undirected.discard(e)
                    directed.add((j, k))
                    changed = True
                    break
                # R3
                mids = [m for m in vs if und(j, m) and (m, k) in directed]
                if any(not adj(m1, m2) for m1, m2 in itertools.combinations(mids, 2)):
                    undirected.discard(e)
                    directed.add((j, k))
                    changed = True
                    break
    return ChainGraph(vs, directed, [tuple(e) for e in undirected])


def essential_graph(d: Dag) -> ChainGraph:
    """Essential graph of the Markov equivalence class of ``d``."""
    vstruct = v_structures(d)
    directed = set()
    for a, c, b in vstruct:
        directed.add((a, c))
        directed.add((b, c))
    undirected = [e for e in d.edges if (e[0], e[1]) not in directed]
    return meek_rules(ChainGraph(d.vertices, directed, undirected))


def extend_to_dag(g: ChainGraph) -> Dag:
    """Consistent DAG extension of a partially directed graph.

    Raises
    ------
    StructureError
        If no extension exists.
    """
    remaining = set(g.vertices)
    directed = set(g.directed)
    undirected = {tuple(sorted(e)) for e in g.undirected}
    result = set(g.directed)

    def neighbours(x):
        out = set()
        for a, b in directed:
            if a == x and b in remaining:
                out.add(b)
            elif b == x and a in remaining:
                out.add(a)
        for a, b in undirected:
            if a == x and b in remaining:
                out.add(b)
            elif b == x and a in remaining:
                out.add(a)
        return out

    def adj(a, b):
        return (a, b) in directed or (b, a) in directed or tuple(sorted((a, b))) in undirected

    while remaining:
        chosen = None
        for x in sorted(remaining):
            if any(a == x and b in remaining for a, b in directed):
                continue
            nb = neighbours(x)
            und_nb = {y for y in nb if tuple(sorted((x, y))) in undirected}
            if all(adj(y, z) for y in und_nb for z in nb if z != y):
                chosen = x
                break
        if chosen is None:
            raise StructureError("graph admits no consistent DAG extension")
        for y in sorted(remaining):
            e = tuple(sorted((chosen, y)))
            if e in undirected:
                result.add((y, chosen))
        remaining.discard(chosen)
    return Dag(g.vertices, result)


def _as_parts(g: Dag | ChainGraph):
    if isinstance(g, Dag):
        return g.vertices, set(g.edges), set()
    return g.vertices, set(g.directed), set(g.undirected)


def shd(g1: Dag | ChainGraph, g2: Dag | ChainGraph) -> int:
    """Structural Hamming distance.

    Every vertex pair whose adjacency or edge mark differs counts once.
    """
    v1, d1, u1 = _as_parts(g1)
    v2, d2, u2 = _as_parts(g2)
    if v1 != v2:
        raise StructureError("graphs have different vertex sets")

    def mark(d, u, a, b):
        if (a, b) in d:
            return ">"
        if (b, a) in d:
            return "<"
        if frozenset((a, b)) in u:
            return "-"
        return None

    return sum(mark(d1, u1, a, b) != mark(d2, u2, a, b) for a, b in itertools.combinations(v1, 2))


@lru_cache(maxsize=None)
def count_dags(n: int) -> int:
    """Number of labelled DAGs on ``n`` vertices by Robinson's recurrence."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return 1
    return sum((-1) ** (k - 1) * comb(n, k) * 2 ** (k * (n - k)) * count_dags(n - k)
               for k in range(1, n + 1))


def enumerate_dags(vertices: Iterable[str]) -> Iterator[Dag]:
    """All DAGs on the given labelled vertex set (brute force)."""
    vs = _labels(vertices)
    pairs = list(itertools.combinations(vs, 2))
    for states in itertools.product((0, 1, 2), repeat=len(pairs)):
        edges = []
        for (a, b), s in zip(pairs, states):
            if s == 1:
                edges.append((a, b))
            elif s == 2:
                edges.append((b, a))
        try:
            yield Dag(vs, edges)
        except StructureError:
            continue
