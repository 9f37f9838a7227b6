"""Pair-copula Bayesian networks: density, simulation and estimation."""
from __future__ import annotations

import logging
import math
import warnings
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .copula import (DEFAULT_CANDIDATES, PairCopula, copula_from_tau, fit_copula, from_free,
                     h_inverse, information_criterion, loglik as copula_loglik, select_copula,
                     to_free)
from .exceptions import InputFormatError, NumericalError, StructureError
from .factorize import Evaluator, QuadratureConfig, factorizer
from .graphs import Dag
from .io import Sample, as_sample

logger = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300


def _edge_key(e) -> tuple[str, str]:
    if isinstance(e, str):
        if "->" not in e:
            raise InputFormatError(f"edge key {e!r} must look like 'w->v'")
        w, v = e.split("->")
        return w.strip(), v.strip()
    w, v = e
    return str(w), str(v)


class PcbnModel:
    """A DAG with one parametric pair copula per edge.

    Parameters
    ----------
    dag : Dag
        Graph including the parent orderings.
    copulas : mapping
        ``copulas[(w, v)]`` is the copula of edge ``w -> v``, i.e. of
        ``c_{v,w|pa(v;w)}`` with arguments ordered ``(F_{v|.}, F_{w|.})``.
    quad : QuadratureConfig, optional
    """

    def __init__(self, dag: Dag, copulas: Mapping, quad: QuadratureConfig | None = None):
        self.dag = dag
        self.copulas = {_edge_key(k): c for k, c in copulas.items()}
        missing = set(dag.edges) - set(self.copulas)
        extra = set(self.copulas) - set(dag.edges)
        if missing or extra:
            raise StructureError(f"copulas do not match the edges (missing {sorted(missing)}, "
                                 f"extra {sorted(extra)})")
        self.quad = quad or QuadratureConfig()

    # -- construction -----------------------------------------------------
    @classmethod
    def from_taus(cls, dag: Dag, families, taus, nu: float = 5.0, **kw) -> "PcbnModel":
        """Model with copula parameters obtained from Kendall's tau per edge.

        ``families`` and ``taus`` are either scalars or mappings keyed by edge.
        """
        cops = {}
        for e in dag.edges:
            fam = families[e] if isinstance(families, Mapping) else families
            tau = taus[e] if isinstance(taus, Mapping) else taus
            cops[e] = copula_from_tau(fam, tau, nu)
        return cls(dag, cops, **kw)

    @property
    def edge_sequence(self) -> tuple[tuple[str, str], ...]:
        """Edges in well-order of the child, then parent order."""
        return tuple((w, v) for v in self.dag.well_order() for w in self.dag.parents(v))

    @property
    def theta(self) -> np.ndarray:
        """All copula parameters concatenated along :attr:`edge_sequence`."""
        parts = [np.asarray(self.copulas[e].params, dtype=float) for e in self.edge_sequence]
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_theta(self, theta: Sequence[float]) -> "PcbnModel":
        theta = list(theta)
        cops = {}
        for e in self.edge_sequence:
            c = self.copulas[e]
            k = c.n_params
            cops[e] = PairCopula(c.family, tuple(theta[:k]), c.rotation)
            theta = theta[k:]
        return PcbnModel(self.dag, cops, self.quad)

    def with_copulas(self, copulas: Mapping) -> "PcbnModel":
        cops = dict(self.copulas)
        cops.update({_edge_key(k): c for k, c in copulas.items()})
        return PcbnModel(self.dag, cops, self.quad)

    def evaluator(self) -> Evaluator:
        return Evaluator(self.dag, self.copulas, self.quad)

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        d = self.dag.to_dict()
        d["copulas"] = [{"edge": [w, v], **self.copulas[(w, v)].to_dict()}
                        for (w, v) in self.edge_sequence]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PcbnModel":
        dag = Dag.from_dict(d)
        raw = d.get("copulas")
        if raw is None:
            raise InputFormatError("model lacks a 'copulas' field")
        cops = {}
        if isinstance(raw, Mapping):
            for k, c in raw.items():
                cops[_edge_key(k)] = PairCopula.from_dict(c)
        else:
            for item in raw:
                if "edge" not in item:
                    raise InputFormatError("copula entry lacks 'edge'")
                cops[_edge_key(item["edge"])] = PairCopula.from_dict(item)
        return cls(dag, cops)

    def __repr__(self):
        body = ", ".join(f"{w}->{v}: {self.copulas[(w, v)]}" for w, v in self.edge_sequence)
        return f"PcbnModel({body})"


def _coords(model_or_dag, data) -> dict:
    dag = model_or_dag.dag if isinstance(model_or_dag, PcbnModel) else model_or_dag
    if isinstance(data, Mapping):
        return {str(k): np.atleast_1d(np.asarray(v, dtype=float)) for k, v in data.items()}
    s = as_sample(data, dag.vertices if not isinstance(data, Sample) else None)
    missing = set(dag.vertices) - set(s.columns)
    if missing:
        raise InputFormatError(f"data lacks columns {sorted(missing)}")
    return {v: s.column(v) for v in dag.vertices}


# ---------------------------------------------------------------------------
# Density


def log_density(model: PcbnModel, data, return_floored: bool = False, memo: dict | None = None):
    """Per-observation log copula density of the model.

    Densities below ``1e-300`` are floored; the affected rows are reported
    through a :class:`RuntimeWarning` and, optionally, returned.

    Raises
    ------
    NumericalError
        If a log density is NaN.
    """
    coords = _coords(model, data)
    ev = Evaluator(model.dag, model.copulas, model.quad, memo)
    ctx = ev.make_context(coords)
    full = factorizer(model.dag).marginal_pdf(model.dag.vertices)
    out = np.zeros(ctx.m)
    with np.errstate(all="ignore"):
        for t in full.terms:
            out = out + ev.log_term(ctx, t)
    if np.any(np.isnan(out)):
        rows = np.nonzero(np.isnan(out))[0].tolist()
        raise NumericalError(f"non-finite log density at rows {rows[:20]}")
    floor = math.log(DENSITY_FLOOR)
    low = out < floor
    if np.any(low):
        rows = np.nonzero(low)[0].tolist()
        warnings.warn(f"density floor hit at rows {rows[:20]}", RuntimeWarning)
        out = np.where(low, floor, out)
    if return_floored:
        return out, np.nonzero(low)[0]
    return out


def density(model: PcbnModel, data):
    """Copula density of the model at each observation."""
    return np.exp(log_density(model, data))


def loglik(model: PcbnModel, data) -> float:
    """Log-likelihood of copula-scale data."""
    return float(np.sum(log_density(model, data)))


def cond_cdf(model: PcbnModel, v: str, given: Iterable[str], data):
    """Conditional cdf ``F_{v|given}`` at each observation."""
    coords = _coords(model, data)
    return model.evaluator().cdf(v, tuple(given), coords)


# ---------------------------------------------------------------------------
# Simulation


def simulate(model: PcbnModel, n: int, rng=None) -> Sample:
    """Draw ``n`` observations on the copula scale.

    Vertices are generated along the well-ordering.  For each vertex an
    independent uniform is mapped through the inverse h-functions of its pair
    copulas, peeling the parents in decreasing parent order.
    """
    rng = np.random.default_rng(rng)
    dag = model.dag
    order = dag.well_order()
    w = rng.random((n, len(order)))
    coords: dict = {}
    ev = model.evaluator()
    for k, v in enumerate(order):
        x = w[:, k]
        pa = dag.parents(v)
        if pa:
            ctx = ev.make_context(coords)
            for p in reversed(pa):
                given = dag.parents_before(v, p)
                cond = ev.cdf(p, given, coords, ctx)
                x = h_inverse(model.copulas[(p, v)], x, cond, "first")
        coords[v] = np.asarray(x, dtype=float)
    return Sample(dag.vertices, np.column_stack([coords[v] for v in dag.vertices]))


# ---------------------------------------------------------------------------
# Estimation


def pseudo_observations(model: PcbnModel, edge, data, ctx=None, ev=None):
    """Arguments ``(F_{v|pa(v;w)}, F_{w|pa(v;w)})`` of the copula of edge ``w -> v``."""
    w, v = edge
    ev = ev or model.evaluator()
    coords = _coords(model, data) if ctx is None else None
    ctx = ctx or ev.make_context(coords)
    given = model.dag.parents_before(v, w)
    return ev.cdf(v, given, None, ctx), ev.cdf(w, given, None, ctx)


def sequential_fit(model: PcbnModel, data) -> PcbnModel:
    """Edge-by-edge maximum likelihood along the well-ordering.

    Families and rotations of ``model`` are kept; only parameters change.
    """
    coords = _coords(model, data)
    cur = model
    for e in model.edge_sequence:
        c = cur.copulas[e]
        if c.n_params == 0:
            continue
        ev = cur.evaluator()
        ctx = ev.make_context(coords)
        x, y = pseudo_observations(cur, e, None, ctx, ev)
        fitted = fit_copula(c.family, x, y, c.rotation,
                            nu=c.params[1] if c.family == "StudentT" else None)
        cur = cur.with_copulas({e: fitted})
    return cur


def joint_fit(model: PcbnModel, data, init: PcbnModel | None = None,
              quad: QuadratureConfig | None = None, maxiter: int = 200) -> PcbnModel:
    """Joint maximum likelihood with a quasi-Newton method.

    Starts from ``init`` (by default ``model``).  The returned model never has
    a lower log-likelihood than the starting point.
    """
    start = init or model
    quad = quad or QuadratureConfig(rel_tol=1e-9, abs_tol=1e-12)
    start = PcbnModel(start.dag, start.copulas, quad)
    coords = _coords(start, data)
    edges = [e for e in start.edge_sequence if start.copulas[e].n_params > 0]
    sizes = [start.copulas[e].n_params for e in edges]
    z0 = np.concatenate([to_free(start.copulas[e]) for e in edges]) if edges else np.zeros(0)
    if z0.size == 0:
        return start

    memo: dict = {}

    def build(z):
        cops, k = {}, 0
        for e, s in zip(edges, sizes):
            cops[e] = from_free(start.copulas[e], z[k:k + s])
            k += s
        return start.with_copulas(cops)

    def nll(z):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val = -float(np.sum(log_density(build(z), coords, memo=memo)))
        except (NumericalError, ValueError):
            return 1e300
        return val if np.isfinite(val) else 1e300

    f0 = nll(z0)
    res = optimize.minimize(nll, z0, method="BFGS",
                            options={"eps": 1e-6, "gtol": 1e-3, "maxiter": maxiter})
    best = res.x if res.fun < f0 else z0
    out = build(best)
    return PcbnModel(out.dag, out.copulas, model.quad)


def _kendall(x, y) -> float:
    t = stats.kendalltau(x, y).statistic
    return 0.0 if not np.isfinite(t) else float(t)


def _greedy(dag: Dag, data, weight: str | None, candidates, criterion: str,
            families: Mapping | None = None):
    coords = _coords(dag, data)
    n = len(next(iter(coords.values())))
    copulas = {e: PairCopula("Independence") for e in dag.edges}
    orders: dict = {}
    for v in dag.well_order():
        pa = list(dag.parents(v))
        chosen: list = []
        remaining = sorted(pa) if weight else list(pa)
        while remaining:
            if weight is None or len(remaining) == 1:
                options = [remaining[0]]
            else:
                options = remaining
            best = None
            for w in options:
                order = chosen + [w] + [x for x in remaining if x != w]
                tmp = PcbnModel(dag.with_orderings({v: order}), copulas)
                x, y = pseudo_observations(tmp, (w, v), coords)
                if families is not None and (w, v) in families:
                    cand = [families[(w, v)]]
                else:
                    cand = candidates
                if weight in ("aic", "bic") or weight is None:
                    c, score = _select(cand, x, y, weight or criterion)
                else:
                    c, score = None, -abs(_kendall(x, y))
                if best is None or score < best[0] - 1e-12:
                    best = (score, w, c, x, y)
            _, w, c, x, y = best
            if c is None or (weight not in ("aic", "bic") and weight is not None):
                cand = [families[(w, v)]] if families and (w, v) in families else candidates
                c, _ = _select(cand, x, y, criterion)
            copulas[(w, v)] = c
            chosen.append(w)
            remaining.remove(w)
        orders[v] = tuple(chosen)
    return orders, PcbnModel(dag.with_orderings(orders), copulas)


def _select(cands, x, y, criterion):
    if len(cands) == 1 and isinstance(cands[0], PairCopula):
        c0 = cands[0]
        c = fit_copula(c0.family, x, y, c0.rotation) if c0.n_params else c0
        ll = copula_loglik(c, x, y)
        return c, information_criterion(ll, c.n_params, len(x), criterion)
    return select_copula(x, y, cands, criterion, return_score=True)


def select_parent_orderings(dag: Dag, data, weight: str = "abs-kendall",
                            candidates: Sequence = DEFAULT_CANDIDATES,
                            criterion: str = "aic") -> dict:
    """Greedy choice of every parent ordering.

    For each vertex the next parent is the one whose copula has the largest
    absolute empirical Kendall's tau (``weight="abs-kendall"``) or the smallest
    AIC/BIC (``weight="aic"``/``"bic"``).  Ties are broken by label.
    """
    weight = weight.lower()
    if weight not in ("abs-kendall", "aic", "bic"):
        raise ValueError(f"unknown weight {weight!r}")
    orders, _ = _greedy(dag, data, weight, candidates, criterion)
    return orders


def select_copula_families(dag: Dag, data, candidates: Sequence = DEFAULT_CANDIDATES,
                           criterion: str = "aic") -> PcbnModel:
    """Sequential family selection and estimation for fixed parent orderings."""
    _, model = _greedy(dag, data, None, candidates, criterion.lower())
    return model


def fit_pcbn(dag: Dag, data, candidates: Sequence = DEFAULT_CANDIDATES, criterion: str = "aic",
             ordering_weight: str | None = "abs-kendall", families: Mapping | None = None
             ) -> PcbnModel:
    """Select parent orderings and copula families, then estimate sequentially.

    Parameters
    ----------
    dag : Dag
    data : Sample or array
    candidates : sequence of str
        Candidate families for every edge.
    criterion : {"aic", "bic"}
    ordering_weight : {"abs-kendall", "aic", "bic", None}
        ``None`` keeps the orderings of ``dag``.
    families : mapping, optional
        Fixed copula (family and rotation) for some edges.
    """
    w = ordering_weight.lower() if ordering_weight else None
    fams = None
    if families:
        fams = {_edge_key(k): (c if isinstance(c, PairCopula) else PairCopula(c, _default_params(c)))
                for k, c in families.items()}
    _, model = _greedy(dag, data, w, candidates, criterion.lower(), fams)
    return model


def _default_params(family: str):
    return copula_from_tau(family, 0.3).params
