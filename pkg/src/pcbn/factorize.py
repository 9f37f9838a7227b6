"""Symbolic factorisation of marginal densities and conditional cdfs of a PCBN.

A marginal density ``f_I`` of a pair-copula Bayesian network is written as an
integral, over a set ``J`` of additional vertices, of a product of marginal
densities and pair-copula densities.  A conditional cdf ``F_{v|K}`` is the
ratio of two such expressions; whenever possible the integral over ``x_v`` is
replaced by an h-function of one of the model's pair copulas.  Conditional
cdfs that appear as copula arguments are resolved recursively.

Numerical evaluation happens on the copula scale (uniform margins), where
every marginal density equals one and ``F_v(x_v) = u_v``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import qmc

from .copula import PairCopula, copula_logpdf, copula_pdf, h_function
from .exceptions import NumericalError, StructureError
from .graphs import Dag, ancestral_set, moral_graph, separated

# ---------------------------------------------------------------------------
# Expression objects


def _join(labels: Iterable[str], underline: str | None = None, style: str = "plain") -> str:
    labels = list(labels)
    out = []
    for x in labels:
        if x == underline:
            x = "\\underline{" + x + "}" if style == "latex" else "".join(ch + "̲" for ch in x)
        out.append(x)
    sep = "" if all(len(x) == 1 for x in labels) else ","
    return sep.join(out)


class CondCdf:
    """Key of a conditional cdf ``F_{var|given}``.

    Equality ignores the order of ``given``; the stored order is used for
    display only.
    """

    __slots__ = ("var", "given", "key")

    def __init__(self, var: str, given: Iterable[str] = ()):
        self.var = str(var)
        self.given = tuple(str(g) for g in given)
        self.key = (self.var, frozenset(self.given))

    def __eq__(self, other):
        return isinstance(other, CondCdf) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def variables(self) -> frozenset:
        return frozenset((self.var,) + self.given)

    def text(self, style: str = "plain") -> str:
        if style == "latex":
            cond = "|" + _join(self.given, style=style) if self.given else ""
            return "F_{" + self.var + cond + "}"
        cond = "|" + _join(self.given) if self.given else ""
        return "F" + self.var + cond

    def __repr__(self):
        return self.text()


@dataclass(frozen=True)
class Marginal:
    """Marginal density ``f_var``."""

    var: str

    @property
    def variables(self) -> frozenset:
        return frozenset((self.var,))

    @property
    def cdfs(self) -> tuple:
        return ()

    def text(self, style: str = "plain") -> str:
        return "f_{" + self.var + "}" if style == "latex" else "f" + self.var


@dataclass(frozen=True)
class CopulaTerm:
    """Pair-copula density ``c_{child,parent|given}(F_{child|given}, F_{parent|given})``.

    ``given`` is the set of parents of ``child`` preceding ``parent``, listed in
    the parent order of ``child``.
    """

    child: str
    parent: str
    given: tuple = ()

    @property
    def variables(self) -> frozenset:
        return frozenset((self.child, self.parent) + tuple(self.given))

    @property
    def cdfs(self) -> tuple:
        return CondCdf(self.child, self.given), CondCdf(self.parent, self.given)

    def text(self, style: str = "plain") -> str:
        a, b = self.cdfs
        if style == "latex":
            cond = "|" + _join(self.given, style=style) if self.given else ""
            return ("c_{" + _join((self.child, self.parent), style=style) + cond + "}("
                    + a.text(style) + ", " + b.text(style) + ")")
        cond = "|" + _join(self.given) if self.given else ""
        return "c" + _join((self.child, self.parent)) + cond + "(" + a.text() + "," + b.text() + ")"


@dataclass(frozen=True)
class HTerm:
    """h-function of the pair copula of edge ``parent -> child``.

    Evaluates to the conditional cdf of ``underlined`` given the other vertex
    of the edge and ``given``.
    """

    child: str
    parent: str
    given: tuple
    underlined: str

    @property
    def variables(self) -> frozenset:
        return frozenset((self.child, self.parent) + tuple(self.given))

    @property
    def cdfs(self) -> tuple:
        return CondCdf(self.child, self.given), CondCdf(self.parent, self.given)

    @property
    def result(self) -> CondCdf:
        other = self.parent if self.underlined == self.child else self.child
        return CondCdf(self.underlined, (other,) + tuple(self.given))

    def text(self, style: str = "plain") -> str:
        a, b = self.cdfs
        pair = (self.child, self.parent)
        if style == "latex":
            cond = "|" + _join(self.given, style=style) if self.given else ""
            sub = ",".join(("\\underline{" + x + "}" if x == self.underlined else x) for x in pair)
            return "h_{" + sub + cond + "}(" + a.text(style) + ", " + b.text(style) + ")"
        cond = "|" + _join(self.given) if self.given else ""
        sub = ",".join("".join(ch + "̲" for ch in x) if x == self.underlined else x for x in pair)
        return "h" + sub + cond + "(" + a.text() + "," + b.text() + ")"


@dataclass(frozen=True)
class FactorExpression:
    """Integral over ``integrate`` of a product of terms.

    When ``upper`` is set the expression additionally integrates the variable
    ``upper`` from minus infinity up to its coordinate (an unsimplified cdf).
    ``substituted`` marks expressions on the copula scale.
    """

    terms: tuple
    integrate: tuple = ()
    upper: str | None = None
    substituted: bool = False

    def text(self, style: str = "plain") -> str:
        dot = " · " if style == "plain" else " "
        body = dot.join(t.text(style) for t in self.terms) if self.terms else "1"
        ivars = list(self.integrate)
        if self.upper is not None:
            ivars = [self.upper] + ivars
        if not ivars:
            return body
        d = "du" if self.substituted else "dx"
        if style == "latex":
            diff = " ".join(d + "_{" + x + "}" for x in ivars)
            lim = "^{y}" if self.upper is not None else ""
            return "\\int" + lim + " " + body + " \\, " + diff
        diff = " ".join(d + x for x in ivars)
        lim = "^y" if self.upper is not None else ""
        return "∫" + lim + " " + body + " " + diff

    def __str__(self):
        return self.text()


@dataclass(frozen=True)
class CdfExpression:
    """Conditional cdf ``F_{var|given}`` as ``numerator / denominator``.

    ``numerator`` is ``None`` for an unconditional cdf (``given`` empty);
    ``denominator`` is ``None`` when it cancelled completely.  ``simplified``
    is False when the integral over ``var`` could not be turned into an
    h-function.
    """

    var: str
    given: tuple
    numerator: FactorExpression | None
    denominator: FactorExpression | None = None
    simplified: bool = True

    @property
    def key(self) -> CondCdf:
        return CondCdf(self.var, self.given)

    def text(self, style: str = "plain") -> str:
        if self.numerator is None:
            return CondCdf(self.var).text(style)
        num = self.numerator.text(style)
        if self.denominator is None:
            return num
        den = self.denominator.text(style)
        if style == "latex":
            return "\\frac{" + num + "}{" + den + "}"
        return "(" + num + ") / (" + den + ")"

    def __str__(self):
        return self.text()


# ---------------------------------------------------------------------------
# Symbolic engine


class Factorizer:
    """Decompositions for one DAG with fixed parent orderings.

    All results are memoised; the object holds no copula parameters.
    """

    def __init__(self, dag: Dag):
        self.dag = dag
        self._pdf_memo: dict = {}
        self._cdf_memo: dict = {}
        self._moral_memo: dict = {}

    # -- helpers ----------------------------------------------------------
    def _moral_of_ancestors(self, subset: frozenset):
        an = ancestral_set(self.dag, subset)
        g = self._moral_memo.get(an)
        if g is None:
            g = moral_graph(self.dag, an)
            self._moral_memo[an] = g
        return g

    def _key_pos(self, v):
        return self.dag.position(v)

    def _max_by_order(self, v: str, candidates) -> str:
        order = self.dag.parents(v)
        return max(candidates, key=order.index)

    # -- marginal densities ---------------------------------------------
    def marginal_pdf(self, subset: Iterable[str]) -> FactorExpression:
        """Decomposition of the marginal density of ``subset``."""
        key = frozenset(str(x) for x in subset)
        if key in self._pdf_memo:
            return self._pdf_memo[key]
        unknown = key - set(self.dag.vertices)
        if unknown:
            raise StructureError(f"unknown vertices {sorted(unknown)}")
        dag = self.dag
        rest = set(key)
        extra: list[str] = []
        terms: list = []
        self.last_trace = []
        while rest:
            v = max(rest, key=self._key_pos)
            rest.discard(v)
            terms.append(Marginal(v))
            pa = dag.parents(v)
            sep = set()
            if rest:
                for w in pa:
                    if w in rest:
                        continue
                    g = self._moral_of_ancestors(frozenset(rest | {w}))
                    if separated(g, {w}, rest):
                        sep.add(w)
            else:
                sep = set(pa)
            step = {"I": sorted(rest | {v}), "v": v, "S": sorted(sep), "w": None, "W": [],
                    "J": None}
            if rest and sep != set(pa):
                if rest <= set(pa):
                    w = self._max_by_order(v, rest)
                else:
                    w = self._max_by_order(v, set(pa) - sep)
                W = [w] + list(dag.parents_before(v, w))
                W.sort(key=lambda x: pa.index(x), reverse=True)
                for x in W:
                    terms.append(CopulaTerm(v, x, dag.parents_before(v, x)))
                    if x not in rest:
                        rest.add(x)
                        extra.append(x)
                step["w"], step["W"] = w, sorted(W)
            step["J"] = sorted(extra)
            self.last_trace.append(step)
        expr = FactorExpression(tuple(terms), tuple(sorted(extra, key=self._key_pos)))
        self._pdf_memo[key] = expr
        return expr

    # -- conditional cdfs -------------------------------------------------
    def markov_reduce(self, v: str, given: Iterable[str]) -> tuple:
        """Drop conditioning vertices that are separated from ``v`` by the rest."""
        k = sorted(set(given) - {v})
        changed = True
        while changed:
            changed = False
            for w in list(k):
                rest = set(k) - {w}
                g = self._moral_of_ancestors(frozenset(set(k) | {v}))
                if separated(g, {v}, {w}, rest):
                    k.remove(w)
                    changed = True
                    break
        return tuple(sorted(k, key=self._key_pos))

    def h_term(self, v: str, given: Iterable[str]) -> HTerm | None:
        """An h-function of a model copula equal to ``F_{v|given}``, if any."""
        gset = set(given)
        dag = self.dag
        for w in sorted(gset, key=self._key_pos, reverse=True):
            rest = gset - {w}
            if dag.has_edge(w, v) and set(dag.parents_before(v, w)) == rest:
                return HTerm(v, w, dag.parents_before(v, w), v)
            if dag.has_edge(v, w) and set(dag.parents_before(w, v)) == rest:
                return HTerm(w, v, dag.parents_before(w, v), v)
        return None

    def conditional_cdf(self, v: str, given: Iterable[str] = ()) -> CdfExpression:
        """Decomposition of ``F_{v|given}``."""
        v = str(v)
        given = tuple(str(g) for g in given)
        key = (v, frozenset(given))
        if key in self._cdf_memo:
            return self._cdf_memo[key]
        if v not in self.dag.vertices or not set(given) <= set(self.dag.vertices):
            raise StructureError(f"unknown vertex in F_{v}|{given}")
        if v in given:
            raise StructureError("conditioned vertex appears in conditioning set")
        k0 = self.markov_reduce(v, given)
        res = self._build_cdf(v, k0)
        res = replace(res, given=given) if res.numerator is not None else CdfExpression(v, given, None)
        self._cdf_memo[key] = res
        return res

    def _build_cdf(self, v: str, k0: tuple) -> CdfExpression:
        if not k0:
            return CdfExpression(v, (), None)
        h = self.h_term(v, k0)
        if h is not None:
            return CdfExpression(v, k0, FactorExpression((h,)), None)
        full = self.marginal_pdf(set(k0) | {v})
        simplified = self.inverse_chain_rule(v, k0, full.integrate)
        if simplified is not None:
            return simplified
        num = FactorExpression(full.terms, full.integrate, upper=v)
        den = self.marginal_pdf(k0)
        num, den = cancel_common(num, den)
        return CdfExpression(v, k0, num, den, simplified=False)

    def inverse_chain_rule(self, v: str, k0: tuple, extra: tuple) -> CdfExpression | None:
        """Replace ``int^y f_{v, k0, J'} dx_v`` by an h-function.

        Subsets ``J'`` of the integration set ``extra`` are tried from small to
        large.  The density of the remaining variables is decomposed afresh,
        which accounts for copulas that are only implicit in the model.
        """
        for r in range(0, len(extra) + 1):
            for sub in itertools.combinations(extra, r):
                m = self.markov_reduce(v, set(k0) | set(sub))
                h = self.h_term(v, m) if m else None
                if h is None:
                    continue
                base = self.marginal_pdf(set(k0) | set(sub))
                ivars = tuple(sorted(set(sub) | set(base.integrate), key=self._key_pos))
                num = FactorExpression((h,) + base.terms, ivars)
                den = self.marginal_pdf(k0)
                num, den = cancel_common(num, den)
                return CdfExpression(v, k0, num, den, simplified=True)
        return None

    # -- resolution -------------------------------------------------------
    def resolve(self, expr) -> dict:
        """All conditional cdfs needed to evaluate ``expr``, resolved recursively.

        Raises
        ------
        StructureError
            If the recursion does not terminate.
        """
        out: dict = {}
        state: dict = {}

        def visit_terms(fe):
            if fe is None:
                return
            for t in fe.terms:
                for c in t.cdfs:
                    visit(c)

        def visit(c: CondCdf):
            s = state.get(c)
            if s == 2:
                return
            if s == 1:
                raise StructureError(f"cyclic dependency while resolving {c.text()}")
            state[c] = 1
            e = self.conditional_cdf(c.var, c.given)
            visit_terms(e.numerator)
            visit_terms(e.denominator)
            state[c] = 2
            out[c] = e

        if isinstance(expr, CdfExpression):
            visit(expr.key)
        elif isinstance(expr, FactorExpression):
            visit_terms(expr)
        elif isinstance(expr, CondCdf):
            visit(expr)
        return out


def cancel_common(num: FactorExpression, den: FactorExpression):
    """Cancel factors shared by numerator and denominator outside the integrals."""
    nfree = set(num.integrate) | ({num.upper} if num.upper else set())
    dfree = set(den.integrate) | ({den.upper} if den.upper else set())
    avail = [t for t in den.terms if not (t.variables & dfree)]
    keep, den_terms = [], list(den.terms)
    for t in num.terms:
        if not (t.variables & nfree) and t in avail:
            avail.remove(t)
            den_terms.remove(t)
        else:
            keep.append(t)
    num = replace(num, terms=tuple(keep))
    if not den_terms and not den.integrate:
        return num, None
    return num, replace(den, terms=tuple(den_terms))


_FACTORIZERS: dict = {}


def factorizer(dag: Dag) -> Factorizer:
    """Memoised :class:`Factorizer` for ``dag``."""
    f = _FACTORIZERS.get(dag)
    if f is None:
        if len(_FACTORIZERS) > 256:
            _FACTORIZERS.clear()
        f = Factorizer(dag)
        _FACTORIZERS[dag] = f
    return f


def decompose_marginal_pdf(dag: Dag, subset: Iterable[str]) -> FactorExpression:
    """Decomposition of the marginal density of ``subset``.

    Examples
    --------
    >>> d = Dag("1234", [("1", "2"), ("1", "3"), ("2", "4"), ("3", "4")])
    >>> str(decompose_marginal_pdf(d, ["2", "4"]))
    'f4 · c42(F4,F2) · f2'
    """
    return factorizer(dag).marginal_pdf(subset)


def decompose_conditional_cdf(dag: Dag, v: str, given: Iterable[str]) -> CdfExpression:
    """Decomposition of ``F_{v|given}`` as a ratio of factor expressions."""
    return factorizer(dag).conditional_cdf(v, given)


def apply_inverse_chain_rule(expr: FactorExpression, v: str, dag: Dag):
    """Simplify ``int^y f dx_v`` where ``expr`` decomposes ``f_{v, K}``.

    Returns the simplified numerator, or ``expr`` with ``upper`` set together
    with a flag ``False`` when no h-function representation was found.

    Returns
    -------
    (FactorExpression, bool)
    """
    fz = factorizer(dag)
    vars_ = set()
    for t in expr.terms:
        vars_ |= t.variables
    k = tuple(sorted(vars_ - set(expr.integrate) - {v}, key=dag.position))
    k0 = fz.markov_reduce(v, k)
    if not k0:
        return FactorExpression((), ()), True
    h = fz.h_term(v, k0)
    if h is not None:
        base = fz.marginal_pdf(k0)
        return FactorExpression((h,) + base.terms, base.integrate), True
    for r in range(0, len(expr.integrate) + 1):
        for sub in itertools.combinations(expr.integrate, r):
            m = fz.markov_reduce(v, set(k0) | set(sub))
            h = fz.h_term(v, m) if m else None
            if h is None:
                continue
            base = fz.marginal_pdf(set(k0) | set(sub))
            ivars = tuple(sorted(set(sub) | set(base.integrate), key=dag.position))
            return FactorExpression((h,) + base.terms, ivars), True
    return replace(expr, upper=v), False


def resolve_conditionals(expr, dag: Dag) -> dict:
    """Map every conditional cdf reachable from ``expr`` to its decomposition."""
    return factorizer(dag).resolve(expr)


def substitute_uniform(expr: FactorExpression) -> FactorExpression:
    """Change variables ``u_w = F_w(x_w)`` for the integration variables.

    Marginal densities of integrated vertices disappear and the domain becomes
    the unit cube.
    """
    drop = set(expr.integrate)
    terms = tuple(t for t in expr.terms if not (isinstance(t, Marginal) and t.var in drop))
    return replace(expr, terms=terms, substituted=True)


# ---------------------------------------------------------------------------
# Numerical evaluation on the copula scale


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances of the numerical integration.

    Parameters
    ----------
    rel_tol, abs_tol : float
        Local error targets of the adaptive Gauss-Kronrod rule.
    max_depth : int
        Maximal number of dyadic refinements of a panel.
    max_panels : int
        Maximal number of panels per integral.
    max_adaptive_dim : int
        Integrals of higher dimension use randomised quasi Monte Carlo.
    qmc_log2 : int
        ``2**qmc_log2`` Sobol points per quasi Monte Carlo integral.
    qmc_seed : int
    fixed_mesh : bool
        Use a fixed panel mesh graded towards both ends instead of adaptive
        refinement.  The result is then a smooth function of the copula
        parameters, which suits finite-difference gradients.
    """

    rel_tol: float = 1e-6
    abs_tol: float = 1e-10
    max_depth: int = 40
    max_panels: int = 200
    initial_panels: int = 4
    max_adaptive_dim: int = 3
    qmc_log2: int = 16
    qmc_seed: int = 0
    fixed_mesh: bool = False


_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
G_WEIGHTS = np.zeros(15)
G_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


_TAIL = 10.0 ** -np.arange(12, 1.5, -1.0)
_GRADED = np.unique(np.concatenate([[0.0, 1.0], _TAIL, np.linspace(0.02, 0.98, 25), 1 - _TAIL]))


def _fixed_integrate(func, upper: np.ndarray):
    m = upper.shape[0]
    p = len(_GRADED) - 1
    rows = np.repeat(np.arange(m), p)
    a = upper[rows] * np.tile(_GRADED[:-1], m)
    b = upper[rows] * np.tile(_GRADED[1:], m)
    half, mid = 0.5 * (b - a), 0.5 * (a + b)
    x = (mid[:, None] + half[:, None] * GK_NODES[None, :]).ravel()
    f = np.asarray(func(np.repeat(rows, 15), x), dtype=float).reshape(-1, 15)
    ok = bool(np.all(np.isfinite(f)))
    f = np.where(np.isfinite(f), f, 0.0)
    return np.bincount(rows, weights=(f @ GK_WEIGHTS) * half, minlength=m), ok


def _gk_panels(func, rows, a, b):
    """Kronrod estimates and error estimates on the panels ``[a, b]``."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    x = (mid[:, None] + half[:, None] * GK_NODES[None, :]).ravel()
    f = np.asarray(func(np.repeat(rows, 15), x), dtype=float).reshape(-1, 15)
    finite = bool(np.all(np.isfinite(f)))
    if not finite:
        f = np.where(np.isfinite(f), f, 0.0)
    k = (f @ GK_WEIGHTS) * half
    g = (f @ G_WEIGHTS) * half
    mean = k / np.where(half > 0, 2 * half, 1.0)
    resasc = (np.abs(f - mean[:, None]) @ GK_WEIGHTS) * half
    err = np.abs(k - g)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(resasc > 0, resasc * np.minimum(1.0, (200 * err / resasc) ** 1.5), err)
    err = np.maximum(scaled, 50 * np.finfo(float).eps * np.abs(k))
    return k, err, finite


def adaptive_integrate(func, upper: np.ndarray, cfg: QuadratureConfig):
    """Integrate ``func`` over ``[0, upper[i]]`` for many rows at once.

    ``func(rows, x)`` evaluates the integrand of row ``rows[k]`` at ``x[k]``.
    A 15-point Gauss-Kronrod rule is applied on panels that are bisected
    until the summed error estimate of each row meets the tolerance.  Only
    panels whose error exceeds an equal share of the tolerance are split.
    The substitution ``x = upper * t**2 * (3 - 2 t)`` smooths power-law
    behaviour at the ends of the interval, which copula densities often show.

    Returns
    -------
    values : ndarray
    ok : bool
        False if some row missed the tolerance within the depth and panel limits.
    """
    upper = np.asarray(upper, dtype=float)
    if cfg.fixed_mesh:
        return _fixed_integrate(func, upper)
    raw = func

    def func(r, t):
        return raw(r, upper[r] * t * t * (3 - 2 * t)) * (upper[r] * 6 * t * (1 - t))

    m = upper.shape[0]
    p0 = cfg.initial_panels
    rows = np.repeat(np.arange(m), p0)
    frac = np.tile(np.arange(p0), m)
    a = frac / p0
    b = (frac + 1) / p0
    depth = np.zeros(rows.shape, dtype=int)
    k, err, ok = _gk_panels(func, rows, a, b)
    while True:
        est = np.bincount(rows, weights=k, minlength=m)
        total = np.bincount(rows, weights=err, minlength=m)
        count = np.bincount(rows, minlength=m)
        tol = np.maximum(cfg.abs_tol, cfg.rel_tol * np.abs(est))
        bad = total > tol
        if not bad.any():
            break
        share = (tol / np.maximum(count, 1))[rows]
        split = bad[rows] & (err > share) & (depth < cfg.max_depth) & (count[rows] < cfg.max_panels)
        if not split.any():
            ok = False
            break
        mid = 0.5 * (a[split] + b[split])
        na = np.concatenate([a[split], mid])
        nb = np.concatenate([mid, b[split]])
        nr = np.tile(rows[split], 2)
        nd = np.tile(depth[split] + 1, 2)
        nk, nerr, fin = _gk_panels(func, nr, na, nb)
        ok = ok and fin
        keep = ~split
        rows = np.concatenate([rows[keep], nr])
        a = np.concatenate([a[keep], na])
        b = np.concatenate([b[keep], nb])
        depth = np.concatenate([depth[keep], nd])
        k = np.concatenate([k[keep], nk])
        err = np.concatenate([err[keep], nerr])
    return est, ok


_MAX_POINTS = 2 ** 18
_QMC_BUDGET = 2 ** 24


class _Ctx:
    """Evaluation context: coordinates of a batch of points."""

    __slots__ = ("coords", "m", "parent", "index", "free", "cache", "depth")

    def __init__(self, coords, m, parent=None, index=None, free=frozenset()):
        self.coords = dict(coords)
        self.m = m
        self.parent = parent
        self.index = index
        self.free = frozenset(free)
        self.cache = {}
        # integration dimensions already open above this context
        self.depth = (parent.depth if parent is not None else 0) + len(self.free)

    def coord(self, v):
        c = self.coords.get(v)
        if c is None:
            if self.parent is None:
                raise StructureError(f"no coordinate for vertex {v}")
            c = self.parent.coord(v)[self.index]
            self.coords[v] = c
        return c


_TAIL = 1e-3


@dataclass(frozen=True)
class _Survival:
    """``1 - h`` for an h-term, used for upper-tail conditional cdfs."""

    term: HTerm

    @property
    def variables(self) -> frozenset:
        return self.term.variables


class Evaluator:
    """Numerical evaluation of decompositions for given pair copulas.

    Parameters
    ----------
    dag : Dag
    copulas : mapping
        ``copulas[(parent, child)]`` is the :class:`PairCopula` of that edge.
    quad : QuadratureConfig, optional
    memo : dict, optional
        Cache shared between evaluators that are always called with the same
        top-level coordinates.  Conditional cdf values are stored under their
        key together with the copulas they depend on, so only the values
        affected by changed copulas are recomputed.
    """

    def __init__(self, dag: Dag, copulas: Mapping, quad: QuadratureConfig | None = None,
                 memo: dict | None = None):
        self.dag = dag
        self.memo = memo
        self.fz = factorizer(dag)
        self.copulas = dict(copulas)
        missing = [e for e in dag.edges if e not in self.copulas]
        if missing:
            raise StructureError(f"missing copulas for edges {missing}")
        self.quad = quad or QuadratureConfig()
        self.accuracy_ok = True

    # -- public -----------------------------------------------------------
    def make_context(self, coords: Mapping) -> _Ctx:
        arrs = {str(k): np.atleast_1d(np.asarray(v, dtype=float)) for k, v in coords.items()}
        m = max((a.shape[0] for a in arrs.values()), default=1)
        arrs = {k: np.broadcast_to(a, (m,)).copy() for k, a in arrs.items()}
        return _Ctx(arrs, m)

    def cdf(self, v: str, given: Iterable[str], coords: Mapping, ctx: _Ctx | None = None):
        """``F_{v|given}`` at the given copula-scale coordinates."""
        ctx = ctx or self.make_context(coords)
        return self._cdf(ctx, CondCdf(v, given))

    def pdf(self, subset: Iterable[str], coords: Mapping, ctx: _Ctx | None = None):
        """Marginal copula density of ``subset`` at the given coordinates."""
        ctx = ctx or self.make_context(coords)
        return self.factor(ctx, self.fz.marginal_pdf(subset))

    def factor(self, ctx: _Ctx, fe: FactorExpression):
        return self._factor(ctx, fe)

    def value(self, expr, coords: Mapping):
        ctx = self.make_context(coords)
        if isinstance(expr, CdfExpression):
            return self._ratio(ctx, expr)
        return self._factor(ctx, expr)

    # -- internals ----------------------------------------------------------
    def _deps(self, key: CondCdf) -> tuple:
        """Edges whose copulas enter the evaluation of ``key``."""
        table = self.fz.__dict__.setdefault("_edge_deps", {})
        if key.key not in table:
            table[key.key] = ()
            edges, stack, seen = set(), [key], set()
            while stack:
                cur = stack.pop()
                if cur.key in seen:
                    continue
                seen.add(cur.key)
                expr = self.fz.conditional_cdf(cur.var, cur.given)
                for fe in (expr.numerator, expr.denominator):
                    for t in (fe.terms if fe is not None else ()):
                        if not isinstance(t, Marginal):
                            edges.add((t.parent, t.child))
                            stack.extend(t.cdfs)
            table[key.key] = tuple(sorted(edges))
        return table[key.key]

    def _cdf(self, ctx: _Ctx, key: CondCdf):
        k = key.key
        hit = ctx.cache.get(k)
        if hit is not None:
            return hit
        if self.memo is not None and ctx.parent is None:
            mk = (k, tuple(self.copulas[e] for e in self._deps(key)))
            hit = self.memo.get(mk)
            if hit is None:
                hit = self._cdf_compute(ctx, key)
                if len(self.memo) > 512:
                    self.memo.clear()
                self.memo[mk] = hit
            ctx.cache[k] = hit
            return hit
        val = self._cdf_compute(ctx, key)
        ctx.cache[k] = val
        return val

    def _cdf_compute(self, ctx: _Ctx, key: CondCdf):
        if ctx.parent is not None and not (key.variables & ctx.free):
            val = self._cdf(ctx.parent, key)[ctx.index]
        else:
            expr = self.fz.conditional_cdf(key.var, key.given)
            val = self._ratio(ctx, expr)
        return val

    def _ratio(self, ctx: _Ctx, expr: CdfExpression):
        if expr.numerator is None:
            return ctx.coord(expr.var)
        num = self._factor(ctx, expr.numerator)
        den = np.ones(ctx.m) if expr.denominator is None else self._factor(ctx, expr.denominator)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = num / den
        val = np.clip(np.where(den > 0, val, 0.5), 0.0, 1.0)
        return self._upper_tail(ctx, expr, val, den)

    def _upper_tail(self, ctx: _Ctx, expr: CdfExpression, val, den):
        """Recompute values close to one as one minus the integral of ``1 - h``.

        The integration tolerance is relative, so this keeps ``1 - F`` accurate
        where copula densities are most sensitive to it.
        """
        fe = expr.numerator
        if not fe.integrate or fe.upper is not None:
            return val
        hs = [k for k, t in enumerate(fe.terms) if isinstance(t, HTerm)]
        rows = np.nonzero((val > 1 - _TAIL) & (den > 0))[0]
        if len(hs) != 1 or rows.size == 0:
            return val
        terms = list(fe.terms)
        terms[hs[0]] = _Survival(terms[hs[0]])
        sub = _Ctx({}, rows.size, ctx, rows)
        comp = self._factor(sub, replace(fe, terms=tuple(terms)))
        out = val.copy()
        out[rows] = np.clip(1.0 - comp / den[rows], 0.0, 1.0)
        return out

    def _term(self, ctx: _Ctx, t):
        if isinstance(t, Marginal):
            return np.ones(ctx.m)
        if isinstance(t, _Survival):
            return 1.0 - self._term(ctx, t.term)
        c = self.copulas[(t.parent, t.child)]
        a, b = t.cdfs
        ua, ub = self._cdf(ctx, a), self._cdf(ctx, b)
        if isinstance(t, CopulaTerm):
            return copula_pdf(c, ua, ub)
        return h_function(c, ua, ub, "first" if t.underlined == t.child else "second")

    def log_term(self, ctx: _Ctx, t):
        if isinstance(t, Marginal):
            return np.zeros(ctx.m)
        c = self.copulas[(t.parent, t.child)]
        a, b = t.cdfs
        return copula_logpdf(c, self._cdf(ctx, a), self._cdf(ctx, b))

    def _product(self, ctx: _Ctx, terms):
        out = np.ones(ctx.m)
        for t in terms:
            out = out * self._term(ctx, t)
        return out

    def _factor(self, ctx: _Ctx, fe: FactorExpression):
        ivars = list(fe.integrate)
        free = set(ivars) | ({fe.upper} if fe.upper else set())
        outer = [t for t in fe.terms if not (t.variables & free)]
        inner = [t for t in fe.terms if t.variables & free]
        val = self._product(ctx, outer)
        if not free:
            return val
        dims = ([fe.upper] if fe.upper else []) + ivars
        upper0 = ctx.coord(fe.upper) if fe.upper else None
        if ctx.depth + len(dims) <= self.quad.max_adaptive_dim:
            integral = self._nested(ctx, inner, dims, upper0)
        else:
            integral = self._qmc(ctx, inner, dims, upper0)
        return val * integral

    def _chunks(self, ctx: _Ctx, per_row: int):
        """Split the rows of ``ctx`` so that each block spawns at most ``_MAX_POINTS`` points."""
        size = max(1, _MAX_POINTS // per_row)
        if ctx.m <= size:
            yield slice(None), ctx
            return
        for s in range(0, ctx.m, size):
            rows = np.arange(s, min(ctx.m, s + size))
            yield rows, _Ctx({}, rows.size, ctx, rows)

    def _nested(self, ctx: _Ctx, terms, dims, upper0):
        var, rest = dims[0], dims[1:]
        limit = upper0 if upper0 is not None else np.ones(ctx.m)
        out = np.empty(ctx.m)
        for rows, sub in self._chunks(ctx, 15 * self.quad.initial_panels):

            def integrand(r, x, sub=sub):
                child = _Ctx({var: x}, x.shape[0], sub, r, {var})
                if rest:
                    return self._nested(child, terms, rest, None)
                return self._product(child, terms)

            val, ok = adaptive_integrate(integrand, limit[rows], self.quad)
            if not ok:
                self.accuracy_ok = False
            out[rows] = val
        return out

    def _qmc(self, ctx: _Ctx, terms, dims, upper0):
        k = len(dims)
        # nested integrals share a fixed evaluation budget across their rows
        log2 = self.quad.qmc_log2
        if ctx.depth:
            log2 = int(np.clip(np.floor(np.log2(_QMC_BUDGET / ctx.m)), 8, log2))
        sob = qmc.Sobol(d=k, scramble=True, seed=self.quad.qmc_seed)
        pts = sob.random_base2(log2)
        q = pts.shape[0]
        out = np.zeros(ctx.m)
        chunk = max(1, _MAX_POINTS // q)
        for s in range(0, ctx.m, chunk):
            rows = np.arange(s, min(ctx.m, s + chunk))
            r = np.repeat(rows, q)
            x = np.tile(pts, (rows.size, 1))
            coords = {}
            scale = np.ones(r.shape[0])
            for j, v in enumerate(dims):
                xv = x[:, j]
                if j == 0 and upper0 is not None:
                    lim = upper0[r]
                    xv = xv * lim
                    scale = scale * lim
                coords[v] = xv
            child = _Ctx(coords, r.shape[0], ctx, r, set(dims))
            vals = self._product(child, terms) * scale
            out[rows] = vals.reshape(rows.size, q).mean(axis=1)
        return out


def evaluate(expr, point: Mapping, copulas: Mapping, dag: Dag,
             quad: QuadratureConfig | None = None):
    """Evaluate a decomposition at a point on the copula scale.

    Parameters
    ----------
    expr : CdfExpression or FactorExpression
    point : mapping
        Copula-scale coordinates ``u_v``; values may be arrays.
    copulas : mapping
        ``copulas[(parent, child)]`` for every edge of ``dag``.
    dag : Dag
    quad : QuadratureConfig, optional

    Raises
    ------
    NumericalError
        If the result is not finite.
    """
    ev = Evaluator(dag, copulas, quad)
    val = ev.value(expr, point)
    if not np.all(np.isfinite(val)):
        raise NumericalError("non-finite value while evaluating decomposition")
    if not ev.accuracy_ok:
        warnings.warn("integration did not reach the requested tolerance", RuntimeWarning)
    if all(np.ndim(x) == 0 for x in point.values()):
        return float(np.asarray(val).ravel()[0])
    return val
