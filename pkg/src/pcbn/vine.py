"""Regular vine copulas.

A vine on ``d`` variables is stored as a list of ``d - 1`` trees.  Every edge
holds its conditioned pair ``(a, b)``, its conditioning set ``D`` and a pair
copula evaluated at ``(F(a|D), F(b|D))``.  Trees are not stored as explicit
node lists: the nodes of tree ``t + 1`` are the edges of tree ``t``, and an
edge of tree ``t + 1`` joins the two edges whose variable sets are
``{a} | D`` and ``{b} | D``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .copula import (DEFAULT_CANDIDATES, PairCopula, copula_logpdf, h_function, h_inverse,
                     select_copula)
from .exceptions import ConfigurationError, StructureError
from .io import Sample, as_sample

VINE_CLASSES = ("C", "D", "R")
WEIGHTS = ("tau", "aic", "bic")
EXACT_PATH_MAX = 8

_INDEP = PairCopula("Independence")


@dataclass(frozen=True)
class VineEdge:
    """Edge ``a,b|D`` of a vine tree with its pair copula."""

    conditioned: tuple
    conditioning: tuple = ()
    copula: PairCopula = field(default=_INDEP)

    def __post_init__(self):
        a, b = (str(x) for x in self.conditioned)
        if a == b:
            raise StructureError(f"conditioned pair must have two distinct variables, got {a!r}")
        cond = tuple(sorted(str(x) for x in self.conditioning))
        if a in cond or b in cond or len(set(cond)) != len(cond):
            raise StructureError(f"invalid conditioning set {cond} for pair ({a}, {b})")
        object.__setattr__(self, "conditioned", (a, b))
        object.__setattr__(self, "conditioning", cond)

    @property
    def union(self) -> frozenset:
        return frozenset(self.conditioned) | frozenset(self.conditioning)

    @property
    def label(self) -> str:
        s = f"{self.conditioned[0]},{self.conditioned[1]}"
        return s + ("|" + ",".join(self.conditioning) if self.conditioning else "")

    def to_dict(self) -> dict:
        return {"conditioned": list(self.conditioned), "conditioning": list(self.conditioning),
                "copula": self.copula.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "VineEdge":
        try:
            return cls(tuple(d["conditioned"]), tuple(d.get("conditioning", ())),
                       PairCopula.from_dict(d.get("copula", {"family": "Independence"})))
        except (KeyError, TypeError) as exc:
            raise StructureError(f"malformed vine edge {d!r}: {exc}") from None


class _DSU:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x, y) -> bool:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return False
        self.parent[ry] = rx
        return True


def _edge_nodes(edge: VineEdge, prev_index: dict) -> tuple:
    """Indices of the two lower-tree edges joined by ``edge``."""
    a, b = edge.conditioned
    d = frozenset(edge.conditioning)
    try:
        return prev_index[d | {a}], prev_index[d | {b}]
    except KeyError:
        raise StructureError(f"edge {edge.label} violates the proximity condition") from None


def validate_vine(variables: Sequence[str], trees: Sequence[Sequence[VineEdge]]) -> None:
    """Raise :class:`StructureError` unless the tree sequence is a regular vine."""
    variables = list(variables)
    d = len(variables)
    if d < 2 or len(set(variables)) != d:
        raise StructureError("a vine needs at least two distinct variables")
    if len(trees) != d - 1:
        raise StructureError(f"expected {d - 1} trees, got {len(trees)}")
    vs = set(variables)
    prev_index = {frozenset({v}): v for v in variables}
    for t, tree in enumerate(trees):
        if len(tree) != d - 1 - t:
            raise StructureError(f"tree {t + 1} must have {d - 1 - t} edges, got {len(tree)}")
        dsu = _DSU(prev_index.values())
        index = {}
        for k, e in enumerate(tree):
            if len(e.conditioning) != t or not e.union <= vs:
                raise StructureError(f"edge {e.label} does not belong to tree {t + 1}")
            x, y = _edge_nodes(e, prev_index)
            if not dsu.union(x, y):
                raise StructureError(f"tree {t + 1} contains a cycle through {e.label}")
            if e.union in index:
                raise StructureError(f"tree {t + 1} repeats the variable set of {e.label}")
            index[e.union] = k
        prev_index = index


class RVine:
    """Regular vine copula.

    Parameters
    ----------
    variables : sequence of str
    trees : sequence of sequences of VineEdge
        ``trees[t]`` is tree ``t + 1``.
    """

    def __init__(self, variables: Iterable[str], trees: Sequence[Sequence[VineEdge]]):
        self.variables = tuple(str(v) for v in variables)
        self.trees = tuple(tuple(t) for t in trees)
        validate_vine(self.variables, self.trees)

    @property
    def dim(self) -> int:
        return len(self.variables)

    @property
    def edges(self) -> list:
        return [e for tree in self.trees for e in tree]

    @property
    def top_edge(self) -> VineEdge:
        return self.trees[-1][0]

    @property
    def n_params(self) -> int:
        return sum(e.copula.n_params for e in self.edges)

    def with_copulas(self, copulas: Sequence[Sequence[PairCopula]]) -> "RVine":
        trees = [[replace(e, copula=c) for e, c in zip(tree, cs)]
                 for tree, cs in zip(self.trees, copulas)]
        return RVine(self.variables, trees)

    def __eq__(self, other):
        return (isinstance(other, RVine) and self.variables == other.variables
                and self.trees == other.trees)

    def __hash__(self):
        return hash((self.variables, self.trees))

    def __repr__(self):
        return f"RVine({list(self.variables)}, top={self.top_edge.label!r})"

    def _columns(self, data) -> dict:
        if isinstance(data, Sample):
            return {v: data.column(v) for v in self.variables}
        if isinstance(data, dict):
            return {v: np.atleast_1d(np.asarray(data[v], dtype=float)) for v in self.variables}
        arr = np.asarray(data, dtype=float)
        arr = arr.reshape(1, -1) if arr.ndim == 1 else arr
        if arr.shape[1] != self.dim:
            raise StructureError(f"expected {self.dim} columns, got {arr.shape[1]}")
        return {v: arr[:, k] for k, v in enumerate(self.variables)}

    def recursion(self, data) -> tuple[dict, np.ndarray]:
        """Run the h-function recursion.

        Returns
        -------
        pseudo : dict
            Maps ``(variable, frozenset(conditioning))`` to the conditional
            cdf values ``F(variable | conditioning)``.
        logdens : ndarray
            Per-row log density.
        """
        cols = self._columns(data)
        pseudo = {(v, frozenset()): x for v, x in cols.items()}
        n = len(next(iter(cols.values())))
        logd = np.zeros(n)
        for tree in self.trees:
            for e in tree:
                a, b = e.conditioned
                dset = frozenset(e.conditioning)
                ua, ub = pseudo[(a, dset)], pseudo[(b, dset)]
                if e.copula.family != "Independence":
                    logd = logd + copula_logpdf(e.copula, ua, ub)
                    pseudo[(a, dset | {b})] = np.clip(h_function(e.copula, ua, ub, "first"), 0, 1)
                    pseudo[(b, dset | {a})] = np.clip(h_function(e.copula, ua, ub, "second"), 0, 1)
                else:
                    pseudo[(a, dset | {b})] = ua
                    pseudo[(b, dset | {a})] = ub
        return pseudo, logd

    def log_density(self, data) -> np.ndarray:
        return self.recursion(data)[1]

    def density(self, data):
        """Vine copula density at one point or at every row of ``data``."""
        out = np.exp(self.log_density(data))
        scalar = not isinstance(data, (Sample, dict)) and np.ndim(data) == 1
        return float(out[0]) if scalar else out

    def loglik(self, data) -> float:
        return float(np.sum(self.log_density(data)))

    def to_dict(self) -> dict:
        return {"variables": list(self.variables),
                "trees": [[e.to_dict() for e in tree] for tree in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "RVine":
        try:
            trees = [[VineEdge.from_dict(e) for e in tree] for tree in d["trees"]]
            return cls(d["variables"], trees)
        except (KeyError, TypeError) as exc:
            raise StructureError(f"malformed vine description: {exc}") from None


def rvine_density(v: RVine, u):
    return v.density(u)


def rvine_loglik(v: RVine, data) -> float:
    return v.loglik(data)


# --------------------------------------------------------------------------- #
# Sequential construction
# --------------------------------------------------------------------------- #

def _split(a: frozenset, b: frozenset) -> tuple:
    """Conditioned pair and conditioning set of the edge joining two nodes."""
    (x,) = a - b
    (y,) = b - a
    return (x, y), a & b


def _feasible(a: frozenset, b: frozenset) -> bool:
    return len(a ^ b) == 2


def _node_key(node: frozenset) -> tuple:
    return tuple(sorted(node))


class _Builder:
    """Tree-by-tree fitting shared by the unconstrained and constrained vines."""

    def __init__(self, sample: Sample, variables, candidates, criterion, weight):
        if weight not in WEIGHTS:
            raise ConfigurationError(f"unknown edge weight {weight!r}; choose from {WEIGHTS}")
        self.variables = tuple(variables)
        self.candidates = tuple(candidates)
        self.criterion = criterion
        self.weight = weight
        self.n = len(sample)
        self.pseudo = {(v, frozenset()): sample.column(v) for v in self.variables}
        self._fits: dict = {}
        self._weights: dict = {}

    def _args(self, a: frozenset, b: frozenset):
        (x, y), dset = _split(a, b)
        return (x, y), dset, self.pseudo[(x, dset)], self.pseudo[(y, dset)]

    def fit(self, a: frozenset, b: frozenset) -> PairCopula:
        key = (a, b)
        if key not in self._fits:
            _, _, ux, uy = self._args(a, b)
            self._fits[key] = select_copula(ux, uy, self.candidates, self.criterion, return_score=True)
        return self._fits[key][0]

    def w(self, a: frozenset, b: frozenset) -> float:
        key = frozenset((a, b))
        if key not in self._weights:
            if self.weight == "tau":
                _, _, ux, uy = self._args(a, b)
                tau = stats.kendalltau(ux, uy).statistic
                val = abs(float(tau)) if np.isfinite(tau) else 0.0
            else:
                a1, b1 = sorted((a, b), key=_node_key)
                _, _, ux, uy = self._args(a1, b1)
                _, score = select_copula(ux, uy, self.candidates, self.weight, return_score=True)
                val = -score
            self._weights[key] = val
        return self._weights[key]

    def add_tree(self, pairs, fit: bool = True) -> tuple[list, list]:
        """Fit the edges ``pairs`` and return (edges, next-level nodes)."""
        edges, nodes = [], []
        for a, b in pairs:
            (x, y), dset, ux, uy = self._args(a, b)
            c = self.fit(a, b) if fit else _INDEP
            if c.family != "Independence":
                hx = np.clip(h_function(c, ux, uy, "first"), 0, 1)
                hy = np.clip(h_function(c, ux, uy, "second"), 0, 1)
            else:
                hx, hy = ux, uy
            self.pseudo[(x, dset | {y})] = hx
            self.pseudo[(y, dset | {x})] = hy
            edges.append(VineEdge((x, y), tuple(dset), c))
            nodes.append(a | b)
        return edges, nodes


def _order_pair(a: frozenset, b: frozenset) -> tuple:
    return (a, b) if _node_key(a) <= _node_key(b) else (b, a)


def _max_spanning_tree(nodes: list, w: Callable, allowed: Callable = _feasible) -> list:
    """Greedy maximum-weight spanning tree with label-order tie-breaking."""
    cands = []
    for a, b in itertools.combinations(nodes, 2):
        if allowed(a, b):
            a, b = _order_pair(a, b)
            cands.append((-w(a, b), _node_key(a), _node_key(b), a, b))
    cands.sort(key=lambda c: c[:3])
    dsu = _DSU(nodes)
    chosen = []
    for _, _, _, a, b in cands:
        if dsu.union(a, b):
            chosen.append((a, b))
    if len(chosen) != len(nodes) - 1:
        raise StructureError("no spanning tree satisfies the proximity condition")
    return chosen


def _path_value(path, w) -> float:
    return sum(w(x, y) for x, y in zip(path, path[1:]))


def _best_path(items: list, w: Callable, start=None, end=None) -> list:
    """Maximum-weight Hamiltonian path, optionally with fixed endpoints.

    Exact dynamic programming over subsets when at most ``EXACT_PATH_MAX``
    items are free, cheapest insertion otherwise.
    """
    free = [x for x in items if x != start and x != end]
    m = len(free)
    if m <= EXACT_PATH_MAX:
        return _dp_path(free, w, start, end)
    return _insertion_path(free, w, start, end)


def _dp_path(free, w, start, end):
    m = len(free)
    if m == 0:
        return [x for x in (start, end) if x is not None]
    full = (1 << m) - 1
    best: dict = {}
    for k in range(m):
        base = w(start, free[k]) if start is not None else 0.0
        best[(1 << k, k)] = (base, None)
    for mask in range(1, full + 1):
        for k in range(m):
            cur = best.get((mask, k))
            if cur is None:
                continue
            for nk in range(m):
                if mask >> nk & 1:
                    continue
                key = (mask | 1 << nk, nk)
                val = cur[0] + w(free[k], free[nk])
                if key not in best or val > best[key][0] + 1e-12:
                    best[key] = (val, k)
    last, top = None, -np.inf
    for k in range(m):
        val = best[(full, k)][0] + (w(free[k], end) if end is not None else 0.0)
        if val > top + 1e-12:
            last, top = k, val
    seq, mask = [], full
    while last is not None:
        seq.append(free[last])
        prev = best[(mask, last)][1]
        mask &= ~(1 << last)
        last = prev
    seq.reverse()
    return ([start] if start is not None else []) + seq + ([end] if end is not None else [])


def _insertion_path(free, w, start, end):
    rest = list(free)
    if start is not None or end is not None:
        path = [x for x in (start, end) if x is not None]
    else:
        a, b = max(itertools.combinations(rest, 2), key=lambda p: w(*p))
        path = [a, b]
        rest = [x for x in rest if x != a and x != b]
    while rest:
        best = None
        for x in rest:
            positions = range(1, len(path)) if (start is not None and end is not None) else \
                range(0 if start is None else 1, len(path) + (1 if end is None else 0))
            for pos in positions:
                left = path[pos - 1] if pos > 0 else None
                right = path[pos] if pos < len(path) else None
                gain = (w(left, x) if left is not None else 0.0) + (w(x, right) if right is not None else 0.0)
                if left is not None and right is not None:
                    gain -= w(left, right)
                if best is None or gain > best[0] + 1e-12:
                    best = (gain, x, pos)
        _, x, pos = best
        path.insert(pos, x)
        rest = [y for y in rest if y != x]
    return path


def _star(nodes: list, w: Callable, roots: list) -> list:
    """Star tree centred on the root maximising the summed weight."""
    best, top = None, -np.inf
    for r in sorted(roots, key=_node_key):
        val = sum(w(r, x) for x in nodes if x != r)
        if val > top + 1e-12:
            best, top = r, val
    return [(best, x) for x in nodes if x != best]


def _consecutive(nodes: list) -> list:
    return list(zip(nodes, nodes[1:]))


def fit_vine_sequential(data, vine_class: str = "R", candidates: Sequence = DEFAULT_CANDIDATES,
                        weight: str = "tau", criterion: str = "aic",
                        variables: Sequence[str] | None = None) -> RVine:
    """Select and fit a C-, D- or R-vine tree by tree.

    Parameters
    ----------
    data : Sample, mapping or array
        Observations on the copula scale.
    vine_class : {"C", "D", "R"}
        Star trees with the heaviest root, a heaviest first-tree path, or
        maximum spanning trees under the proximity condition.
    candidates : sequence
        Pair-copula families, see :func:`pcbn.copula.select_copula`.
    weight : {"tau", "aic", "bic"}
        Edge weight used to choose the trees.  ``"tau"`` is ``|tau_hat|``.
    criterion : {"aic", "bic"}
        Family selection criterion.
    """
    sample = as_sample(data)
    variables = tuple(variables) if variables is not None else sample.columns
    if vine_class not in VINE_CLASSES:
        raise ConfigurationError(f"unknown vine class {vine_class!r}; choose from {VINE_CLASSES}")
    if len(variables) < 2:
        raise StructureError("a vine needs at least two variables")
    b = _Builder(sample, variables, candidates, criterion, weight)
    nodes = [frozenset({v}) for v in variables]
    trees = []
    for t in range(len(variables) - 1):
        if vine_class == "R":
            pairs = _max_spanning_tree(nodes, b.w)
        elif vine_class == "C":
            pairs = _star(nodes, b.w, nodes)
        elif t == 0:
            pairs = _consecutive(_best_path(nodes, b.w))
        else:
            pairs = _consecutive(nodes)
        edges, nodes = b.add_tree(pairs)
        trees.append(edges)
    return RVine(variables, trees)


def build_constrained_vine(data, i: str, j: str, K: Iterable[str], vine_class: str = "R",
                           candidates: Sequence = DEFAULT_CANDIDATES, criterion: str = "aic",
                           weight: str = "tau", fit_top: bool = True) -> RVine:
    """Vine on ``{i, j} | K`` whose top edge is ``i,j|K``.

    Neither ``i`` nor ``j`` is ever part of an inner vertex: below the top
    tree, every vertex containing ``i`` or ``j`` is a leaf.  The C-class
    draws its roots from ``K`` only, the D-class places ``i`` and ``j`` at the
    ends of the first-tree path and the R-class grows a vine on ``K`` and
    attaches ``i`` and ``j`` to it by the heaviest feasible edge.

    With ``fit_top=False`` the top edge is left as the independence copula,
    which is all the Rosenblatt transform needs.
    """
    i, j = str(i), str(j)
    K = sorted({str(k) for k in K})
    if not K:
        raise StructureError("K must be nonempty; use an unconditional test instead")
    if i == j or i in K or j in K:
        raise StructureError("i, j and K must be disjoint")
    if vine_class not in VINE_CLASSES:
        raise ConfigurationError(f"unknown vine class {vine_class!r}; choose from {VINE_CLASSES}")
    sample = as_sample(data)
    variables = (i, *K, j)
    b = _Builder(sample, variables, candidates, criterion, weight)
    p = len(K) + 1
    nodes = [frozenset({v}) for v in variables]
    trees = []
    path = None
    for t in range(p):
        ni = next(x for x in nodes if i in x)
        nj = next(x for x in nodes if j in x)
        inner = [x for x in nodes if x is not ni and x is not nj]
        if t == p - 1:
            pairs = [(ni, nj)]
        elif vine_class == "C":
            pairs = _star(nodes, b.w, inner)
        elif vine_class == "D":
            if path is None:
                path = _best_path(nodes, b.w, start=ni, end=nj)
                pairs = _consecutive(path)
            else:
                pairs = _consecutive(nodes)
        else:
            pairs = _max_spanning_tree(inner, b.w) if len(inner) > 1 else []
            for leaf in (ni, nj):
                opts = [x for x in inner if _feasible(leaf, x)]
                best = max(sorted(opts, key=_node_key), key=lambda x: b.w(leaf, x))
                pairs.append((leaf, best) if leaf is ni else (best, leaf))
        edges, nodes = b.add_tree(pairs, fit=fit_top or t < p - 1)
        if t == p - 1:
            e = edges[0]
            if e.conditioned != (i, j):
                e = VineEdge((i, j), e.conditioning, e.copula)
            edges = [e]
        trees.append(edges)
    return RVine(variables, trees)


def check_rule_r(v: RVine, i: str, j: str) -> bool:
    """True when every vertex containing ``i`` or ``j`` below the top tree is a leaf."""
    for tree in v.trees[:-1]:
        deg: dict = {}
        for e in tree:
            a, b = e.conditioned
            dset = frozenset(e.conditioning)
            for node in (dset | {a}, dset | {b}):
                deg[node] = deg.get(node, 0) + 1
        for node, k in deg.items():
            if (i in node or j in node) and k > 1:
                return False
    top = v.top_edge
    return set(top.conditioned) == {i, j}


def rosenblatt_transform(v: RVine, data, i: str, j: str, K: Iterable[str] | None = None):
    """Conditional cdf columns ``F(i|K)`` and ``F(j|K)`` from the top-tree inputs."""
    top = v.top_edge
    i, j = str(i), str(j)
    kset = frozenset(top.conditioning) if K is None else frozenset(str(k) for k in K)
    if set(top.conditioned) != {i, j} or frozenset(top.conditioning) != kset:
        raise StructureError(f"vine top edge is {top.label}, not {i},{j}|{','.join(sorted(kset))}")
    pseudo, _ = v.recursion(data)
    return pseudo[(i, kset)], pseudo[(j, kset)]


# --------------------------------------------------------------------------- #
# Simulation
# --------------------------------------------------------------------------- #

def _sampling_order(v: RVine) -> list:
    """Variables in an order where each new one is linked to all earlier ones."""
    trees = [list(t) for t in v.trees]
    order = []
    while trees:
        x = trees[-1][0].conditioned[1]
        order.append(x)
        trees = [[e for e in tree if x not in e.conditioned] for tree in trees[:-1]]
    order.append(next(u for u in v.variables if u not in order))
    return order[::-1]


def simulate_vine(v: RVine, n: int, rng=None) -> Sample:
    """Draw ``n`` observations by inverting the h-function chain."""
    rng = np.random.default_rng(rng)
    order = _sampling_order(v)
    w = rng.random((n, v.dim))
    pseudo: dict = {}
    known: set = set()
    done: set = set()
    edges = v.edges
    for k, x in enumerate(order):
        links = sorted((e for e in edges if x in e.conditioned and e.union <= known | {x}),
                       key=lambda e: len(e.conditioning), reverse=True)
        q = w[:, k]
        for e in links:
            a, b = e.conditioned
            dset = frozenset(e.conditioning)
            if e.copula.family == "Independence":
                continue
            if x == a:
                q = h_inverse(e.copula, q, pseudo[(b, dset)], "first")
            else:
                q = h_inverse(e.copula, q, pseudo[(a, dset)], "second")
        pseudo[(x, frozenset())] = np.clip(q, 0, 1)
        known.add(x)
        for tree in v.trees:
            for e in tree:
                if e in done or not e.union <= known:
                    continue
                a, b = e.conditioned
                dset = frozenset(e.conditioning)
                ua, ub = pseudo[(a, dset)], pseudo[(b, dset)]
                if e.copula.family == "Independence":
                    pseudo[(a, dset | {b})], pseudo[(b, dset | {a})] = ua, ub
                else:
                    pseudo[(a, dset | {b})] = np.clip(h_function(e.copula, ua, ub, "first"), 0, 1)
                    pseudo[(b, dset | {a})] = np.clip(h_function(e.copula, ua, ub, "second"), 0, 1)
                done.add(e)
    values = np.column_stack([pseudo[(x, frozenset())] for x in v.variables])
    return Sample(v.variables, values)


def independence_vine(variables: Sequence[str]) -> RVine:
    """D-vine in the given order with independence copulas on every edge."""
    variables = [str(x) for x in variables]
    d = len(variables)
    trees = [[VineEdge((variables[k], variables[k + t + 1]), tuple(variables[k + 1:k + t + 1]))
              for k in range(d - t - 1)] for t in range(d - 1)]
    return RVine(variables, trees)
