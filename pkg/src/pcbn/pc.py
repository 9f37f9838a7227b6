"""PC structure learning: skeleton search and edge orientation."""
from __future__ import annotations

import csv
import io as _io
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .citest import TestResult, make_test
from .exceptions import StructureError, TestError
from .graphs import (ChainGraph, UGraph, _partially_directed_cycle_edges, extend_to_dag,
                     is_chain_graph, meek_rules)
from .io import as_sample

logger = logging.getLogger(__name__)


class SepsetTable(dict):
    """Separating sets keyed by unordered vertex pairs."""

    @staticmethod
    def _key(a, b) -> frozenset:
        return frozenset((str(a), str(b)))

    def set(self, a, b, k: Iterable[str]) -> None:
        self[self._key(a, b)] = tuple(sorted(k))

    def get_pair(self, a, b, default=None):
        return self.get(self._key(a, b), default)

    def has_pair(self, a, b) -> bool:
        return self._key(a, b) in self


@dataclass(frozen=True)
class TestRecord:
    """One CI test run by the skeleton search."""

    __test__ = False

    i: str
    j: str
    K: tuple
    p_value: float
    decision: str
    error: str = ""


@dataclass
class PcResult:
    """Learned chain graph with the intermediate results of the PC algorithm."""

    graph: ChainGraph
    skeleton: UGraph
    sepsets: SepsetTable
    log: list = field(default_factory=list)
    conflicts: list = field(default_factory=list)
    repaired: list = field(default_factory=list)
    extendable: bool = True

    def log_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "K", "p_value", "decision", "error"])
        for r in self.log:
            w.writerow([r.i, r.j, " ".join(r.K), format(r.p_value, ".6g"), r.decision, r.error])
        return buf.getvalue()


def _run(test: Callable, i, j, K, alpha, cache, log) -> bool:
    """True when the test accepts independence; failures count as dependence."""
    key = (frozenset((i, j)), frozenset(K))
    if key not in cache:
        try:
            res: TestResult = test(i, j, K)
            cache[key] = res.p_value >= alpha
            log.append(TestRecord(i, j, tuple(K), res.p_value, "H0" if cache[key] else "H1"))
        except TestError as exc:
            logger.warning("%s; keeping edge %s-%s", exc, i, j)
            cache[key] = False
            log.append(TestRecord(i, j, tuple(K), float("nan"), "H1", str(exc)))
    return cache[key]


def pc_skeleton(variables: Iterable[str], alpha: float, test: Callable,
                max_k: int | None = None, log: list | None = None) -> tuple[UGraph, SepsetTable]:
    """Skeleton search starting from the complete graph.

    Levels ``k = 0, 1, ...`` visit ordered adjacent pairs ``(i, j)`` and
    subsets ``K`` of ``ad(i) - {j}`` of size ``k`` in lexicographic order.
    An edge is deleted at the first accepted independence and the deletion
    is visible immediately.  Results are cached, so a triple ``(i, j, K)`` is
    tested at most once whichever way round the pair is visited.
    """
    vs = sorted(str(v) for v in variables)
    g = UGraph(vs, itertools.combinations(vs, 2))
    sepsets = SepsetTable()
    cache: dict = {}
    log = [] if log is None else log
    k = 0
    while any(len(g.neighbors(v)) > k for v in vs) and (max_k is None or k <= max_k):
        for i in vs:
            for j in g.neighbors(i):
                if not g.adjacent(i, j):
                    continue
                rest = [x for x in g.neighbors(i) if x != j]
                if len(rest) < k:
                    continue
                for K in itertools.combinations(rest, k):
                    if _run(test, i, j, K, alpha, cache, log):
                        g.remove_edge(i, j)
                        sepsets.set(i, j, K)
                        break
        k += 1
    return g, sepsets


def orient(skeleton: UGraph, sepsets: SepsetTable, conflicts: list | None = None) -> ChainGraph:
    """Introduce v-structures, then apply the Meek rules.

    Triples ``i - k - j`` with ``i, j`` non-adjacent and ``k`` outside
    ``S_ij`` become ``i -> k <- j``.  They are visited in label order.  If
    either edge was already oriented the other way by an earlier
    v-structure, the earlier direction is kept and the new v-structure is
    skipped.
    """
    conflicts = [] if conflicts is None else conflicts
    vs = skeleton.vertices
    directed: set = set()
    for i, j in itertools.combinations(vs, 2):
        if skeleton.adjacent(i, j):
            continue
        if not sepsets.has_pair(i, j):
            raise StructureError(f"no separating set for non-adjacent pair {i}, {j}")
        s = set(sepsets.get_pair(i, j))
        for k in vs:
            if k in s or not (skeleton.adjacent(i, k) and skeleton.adjacent(j, k)):
                continue
            if (k, i) in directed or (k, j) in directed:
                conflicts.append((i, k, j))
                logger.info("v-structure %s->%s<-%s conflicts with an earlier orientation", i, k, j)
                continue
            directed.update({(i, k), (j, k)})
    undirected = [e for e in skeleton.edges if (e[0], e[1]) not in directed and (e[1], e[0]) not in directed]
    return meek_rules(ChainGraph(vs, directed, undirected))


def _repair(g: ChainGraph) -> tuple[ChainGraph, list]:
    """Undirect every directed edge lying on a partially directed cycle."""
    bad = _partially_directed_cycle_edges(g.vertices, g.directed, g.undirected)
    if not bad:
        return g, []
    return ChainGraph(g.vertices, g.directed - bad, list(g.undirected) + [tuple(e) for e in bad]), sorted(bad)


def pc(data, alpha: float = 0.05, test: str | Callable = "COR", max_k: int | None = None,
       **test_options) -> PcResult:
    """Estimate the essential graph with the PC algorithm.

    Parameters
    ----------
    data : Sample, array or None
        Observations on the copula scale; ignored when ``test`` carries its own
        variables (e.g. a d-separation oracle).
    alpha : float
    test : str or callable
        A test name such as ``"COR"`` or ``"R-H"``, or a callable
        ``test(i, j, K) -> TestResult``.
    max_k : int, optional
        Largest conditioning set size.
    """
    if isinstance(test, str):
        test = make_test(test, as_sample(data), alpha, **test_options)
    variables = getattr(test, "variables", None)
    if variables is None:
        variables = as_sample(data).columns
    log: list = []
    skel, sepsets = pc_skeleton(variables, alpha, test, max_k, log)
    conflicts: list = []
    g = orient(skel, sepsets, conflicts)
    repaired: list = []
    if not is_chain_graph(g):
        g, repaired = _repair(g)
        logger.warning("undirected %d edges on partially directed cycles", len(repaired))
    try:
        extend_to_dag(g)
        extendable = True
    except StructureError:
        extendable = False
    return PcResult(g, skel, sepsets, log, conflicts, repaired, extendable)


__all__ = ["SepsetTable", "TestRecord", "PcResult", "pc_skeleton", "orient", "pc"]
