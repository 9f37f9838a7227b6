"""Independence and conditional independence tests.

Unconditional tests act on two columns.  Conditional tests take a sample
and labels ``i, j`` plus a conditioning set ``K``.  The vine test maps
``u_i`` and ``u_j`` to ``F(u_i | u_K)`` and ``F(u_j | u_K)`` with a fitted
constrained vine and applies an unconditional test to the result.

Without ties the rank statistics of the Hoeffding and Genest-Remillard
tests have a distribution-free permutation null that depends on ``n``
only.  It is simulated once per ``(n, n_perm, seed)`` and reused.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, optimize, stats

from .copula import DEFAULT_CANDIDATES
from .exceptions import (ConfigurationError, DegenerateInputError, NumericalError, PcbnError,
                         TestError)
from .graphs import Dag, d_separated
from .io import Sample, as_sample
from .vine import build_constrained_vine, rosenblatt_transform

INNER_TESTS = ("K", "H", "GR")
TEST_NAMES = ("COR",) + tuple(f"{c}-{t}" for c in "CDR" for t in ("GR", "H", "K"))


@dataclass(frozen=True)
class TestResult:
    """Outcome of a test at level ``alpha``; ``decision`` is ``"H1"`` iff ``p_value < alpha``."""

    __test__ = False

    statistic: float
    p_value: float
    alpha: float
    method: str

    @property
    def decision(self) -> str:
        return "H1" if self.p_value < self.alpha else "H0"

    @property
    def independent(self) -> bool:
        return self.decision == "H0"


def _pair(x, y, n_min: int):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise DegenerateInputError("columns must have equal length")
    if len(x) < n_min:
        raise DegenerateInputError(f"need at least {n_min} observations, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateInputError("non-finite observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("constant column")
    return x, y


def _check_alpha(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    return float(alpha)


def kendall_test(x, y, alpha: float = 0.05) -> TestResult:
    """Asymptotic normal test of zero Kendall's tau.

    The statistic is ``sqrt(9 n (n - 1) / (2 (2 n + 5))) * tau_hat``.
    """
    alpha = _check_alpha(alpha)
    x, y = _pair(x, y, 10)
    n = len(x)
    tau = float(stats.kendalltau(x, y).statistic)
    z = math.sqrt(9.0 * n * (n - 1) / (2.0 * (2 * n + 5))) * tau
    p = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return TestResult(z, p, alpha, "K")


# --------------------------------------------------------------------------- #
# Rank statistics
# --------------------------------------------------------------------------- #

def _tie_fraction(x) -> float:
    return 1.0 - len(np.unique(x)) / len(x)


def _check_ties(x, y):
    if max(_tie_fraction(x), _tie_fraction(y)) > 0.5:
        raise DegenerateInputError("more than half of the observations are ties")
    return _tie_fraction(x) == 0 and _tie_fraction(y) == 0


def _bkr_from_ranks(r: np.ndarray, s: np.ndarray) -> float:
    """``sum_i (N_i / n - r_i s_i / n^2)^2`` with ``r, s`` counting ranks."""
    n = len(r)
    out = 0.0
    step = max(1, 2_000_000 // n)
    for lo in range(0, n, step):
        rr, ss = r[lo:lo + step, None], s[lo:lo + step, None]
        cnt = np.count_nonzero((r[None, :] <= rr) & (s[None, :] <= ss), axis=1)
        out += float(np.sum((cnt / n - r[lo:lo + step] * s[lo:lo + step] / n**2) ** 2))
    return out


def bkr_statistic(x, y) -> float:
    """Blum-Kiefer-Rosenblatt statistic ``n * int (F_n - F_n^X F_n^Y)^2 dF_n``."""
    r = stats.rankdata(x, method="max")
    s = stats.rankdata(y, method="max")
    return _bkr_from_ranks(r, s)


def _gr_from_pseudo(u: np.ndarray, v: np.ndarray) -> float:
    n = len(u)
    a = 1.0 - np.maximum(u[:, None], u[None, :])
    b = 1.0 - np.maximum(v[:, None], v[None, :])
    return _gr_core(a, b, u, v, n)


def _gr_core(a, b, u, v, n) -> float:
    quad = float(np.einsum("ij,ij->", a, b)) / n**2
    lin = float(np.sum((1.0 - u**2) * (1.0 - v**2))) / (2.0 * n)
    return n * (quad - lin + 1.0 / 9.0)


def gr_statistic(x, y) -> float:
    """Cramer-von Mises statistic ``n * int int (C_n(u, v) - u v)^2 du dv``."""
    n = len(x)
    return _gr_from_pseudo(stats.rankdata(x) / (n + 1), stats.rankdata(y) / (n + 1))


@functools.lru_cache(maxsize=64)
def _null(kind: str, n: int, n_perm: int, seed: int) -> np.ndarray:
    """Permutation null for tie-free data (read-only array)."""
    rng = np.random.default_rng([seed, n])
    ranks = np.arange(1, n + 1, dtype=float)
    out = np.empty(n_perm)
    if kind == "H":
        for k in range(n_perm):
            out[k] = _bkr_from_ranks(ranks, rng.permutation(ranks))
    else:
        u = ranks / (n + 1)
        a = 1.0 - np.maximum(u[:, None], u[None, :])
        for k in range(n_perm):
            pi = rng.permutation(n)
            out[k] = _gr_core(a, a[np.ix_(pi, pi)], u, u[pi], n)
    out.setflags(write=False)
    return out


def _perm_pvalue(stat: float, null: np.ndarray) -> float:
    # relative tolerance guards against summation-order noise in exact ties
    return float((1 + np.count_nonzero(null >= stat * (1 - 1e-12))) / (len(null) + 1))


def _data_null(kind: str, x, y, n_perm: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, len(x)])
    stat = bkr_statistic if kind == "H" else gr_statistic
    return np.array([stat(x, y[rng.permutation(len(y))]) for _ in range(n_perm)])


_LAMBDAS = np.array([1.0 / (math.pi**4 * j * j * k * k) for j in range(1, 41) for k in range(1, 41)])


def _saddlepoint_tail(x: float, lam: np.ndarray) -> float:
    """Lugannani-Rice approximation of ``P(sum lam Z^2 > x)`` for ``x`` above the mean."""
    top = 0.5 / lam.max()
    s = optimize.brentq(lambda t: np.sum(lam / (1.0 - 2.0 * t * lam)) - x, 0.0, top * (1 - 1e-15),
                        xtol=1e-300, rtol=1e-14)
    k = -0.5 * np.sum(np.log1p(-2.0 * s * lam))
    k2 = np.sum(2.0 * lam**2 / (1.0 - 2.0 * s * lam) ** 2)
    w = math.sqrt(max(2.0 * (s * x - k), 0.0))
    u = s * math.sqrt(k2)
    return float(stats.norm.sf(w) + stats.norm.pdf(w) * (1.0 / u - 1.0 / w))


def bkr_asymptotic_pvalue(b: float) -> float:
    """Tail probability of the limiting law ``sum_jk Z_jk^2 / (pi^4 j^2 k^2)``.

    Imhof inversion on the leading 1600 weights; the mean of the remaining
    terms is added as a constant.  Where the saddlepoint approximation falls
    below ``1e-5`` it is returned instead, since the oscillating Imhof
    integrand cannot be resolved that far in the tail.
    """
    shift = 1.0 / 36.0 - float(_LAMBDAS.sum())
    x = b - shift
    lam = _LAMBDAS

    def f(t):
        if t == 0.0:
            return 0.5 * (lam.sum() - x)
        theta = 0.5 * np.sum(np.arctan(lam * t)) - 0.5 * x * t
        rho = np.exp(0.25 * np.sum(np.log1p((lam * t) ** 2)))
        return math.sin(theta) / (t * rho)

    if x > lam.sum():
        tail = _saddlepoint_tail(x, lam)
        if tail < 1e-5:
            return tail
    val, _ = integrate.quad(f, 0.0, np.inf, limit=400)
    return float(min(1.0, max(0.0, 0.5 + val / math.pi)))


def hoeffding_bkr_test(x, y, alpha: float = 0.05, n_perm: int = 999, seed: int = 0,
                       method: str = "permutation") -> TestResult:
    """Blum-Kiefer-Rosenblatt test of independence (Hoeffding's D functional).

    Parameters
    ----------
    method : {"permutation", "asymptotic"}
        Permutation p-value with ``n_perm`` seeded permutations, or the
        limiting weighted chi-square law.
    """
    alpha = _check_alpha(alpha)
    x, y = _pair(x, y, 20)
    no_ties = _check_ties(x, y)
    b = bkr_statistic(x, y)
    if method == "asymptotic":
        return TestResult(b, bkr_asymptotic_pvalue(b), alpha, "H")
    if method != "permutation":
        raise ConfigurationError(f"unknown p-value method {method!r}")
    if n_perm < 1:
        raise ConfigurationError("n_perm must be positive")
    null = _null("H", len(x), n_perm, seed) if no_ties else _data_null("H", x, y, n_perm, seed)
    return TestResult(b, _perm_pvalue(b, null), alpha, "H")


def genest_remillard_test(x, y, alpha: float = 0.05, boot_n: int = 999,
                          seed: int = 0) -> TestResult:
    """Cramer-von Mises test on the empirical copula process.

    The p-value comes from ``boot_n`` seeded permutations of one column.
    """
    alpha = _check_alpha(alpha)
    if boot_n < 100:
        raise ConfigurationError(f"boot_n must be at least 100, got {boot_n}")
    x, y = _pair(x, y, 20)
    no_ties = _check_ties(x, y)
    s = gr_statistic(x, y)
    null = _null("GR", len(x), boot_n, seed) if no_ties else _data_null("GR", x, y, boot_n, seed)
    return TestResult(s, _perm_pvalue(s, null), alpha, "GR")


# --------------------------------------------------------------------------- #
# Conditional tests
# --------------------------------------------------------------------------- #

def _labels(i, j, K) -> tuple:
    i, j = str(i), str(j)
    K = tuple(sorted({str(k) for k in K}))
    if i == j or i in K or j in K:
        raise ConfigurationError("i, j and K must be disjoint")
    return i, j, K


def partial_correlation(data, i, j, K=()) -> float:
    """Partial correlation of the normal scores of ``i`` and ``j`` given ``K``."""
    sample = as_sample(data)
    i, j, K = _labels(i, j, K)
    cols = [i, j, *K]
    z = stats.norm.ppf(np.clip(np.column_stack([sample.column(c) for c in cols]), 1e-12, 1 - 1e-12))
    r = np.corrcoef(z, rowvar=False)
    r = np.atleast_2d(r)
    if not np.all(np.isfinite(r)) or np.linalg.cond(r) > 1e12:
        raise NumericalError("singular correlation matrix")
    p = np.linalg.inv(r)
    return float(np.clip(-p[0, 1] / math.sqrt(p[0, 0] * p[1, 1]), -1.0, 1.0))


def fisher_z_test(data, i, j, K=(), alpha: float = 0.05) -> TestResult:
    """Fisher-z test of zero partial correlation on normal scores.

    The statistic is ``sqrt(n - |K| - 3) * atanh(rho_hat)`` with ``n`` the
    sample size.
    """
    alpha = _check_alpha(alpha)
    sample = as_sample(data)
    i, j, K = _labels(i, j, K)
    n = len(sample)
    if n <= len(K) + 3:
        raise DegenerateInputError(f"need more than {len(K) + 3} observations")
    rho = partial_correlation(sample, i, j, K)
    z = math.sqrt(n - len(K) - 3) * math.atanh(min(max(rho, -1 + 1e-15), 1 - 1e-15))
    p = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return TestResult(z, p, alpha, "COR")


def inner_test(name: str, x, y, alpha: float = 0.05, seed: int = 0, n_perm: int = 999) -> TestResult:
    """Dispatch to the Kendall (``"K"``), BKR (``"H"``) or GR (``"GR"``) test."""
    if name == "K":
        return kendall_test(x, y, alpha)
    if name == "H":
        return hoeffding_bkr_test(x, y, alpha, n_perm=n_perm, seed=seed)
    if name == "GR":
        return genest_remillard_test(x, y, alpha, boot_n=n_perm, seed=seed)
    raise ConfigurationError(f"unknown inner test {name!r}; choose from {INNER_TESTS}")


def vine_ci_test(data, i, j, K=(), vine_class: str = "R", inner: str = "H", alpha: float = 0.05,
                 candidates: Sequence = DEFAULT_CANDIDATES, criterion: str = "aic",
                 seed: int = 0, n_perm: int = 999) -> TestResult:
    """Conditional independence test through a rule-R vine.

    For ``K`` empty the inner test runs on the raw columns.  Otherwise a
    constrained vine with top edge ``i,j|K`` is fitted and the inner test is
    applied to the Rosenblatt-transformed columns.

    Raises
    ------
    TestError
        If the vine cannot be fitted or the inner test fails.
    """
    sample = as_sample(data)
    i, j, K = _labels(i, j, K)
    method = f"{vine_class}-{inner}"
    try:
        if K:
            v = build_constrained_vine(sample, i, j, K, vine_class, candidates, criterion,
                                       fit_top=False)
            wi, wj = rosenblatt_transform(v, sample, i, j, K)
        else:
            wi, wj = sample.column(i), sample.column(j)
        res = inner_test(inner, wi, wj, alpha, seed, n_perm)
    except ConfigurationError:
        raise
    except (PcbnError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise TestError(f"{method} test of {i},{j}|{','.join(K)} failed: {exc}") from exc
    return TestResult(res.statistic, res.p_value, res.alpha, method)


# --------------------------------------------------------------------------- #
# Test handles
# --------------------------------------------------------------------------- #

class CITest:
    """Callable ``test(i, j, K) -> TestResult`` bound to a sample.

    Parameters
    ----------
    name : str
        ``"COR"`` for Fisher-z or ``"<class>-<inner>"`` such as ``"R-H"``.
    data : Sample
    alpha : float
    """

    def __init__(self, name: str, data, alpha: float = 0.05, seed: int = 0, n_perm: int = 999,
                 candidates: Sequence = DEFAULT_CANDIDATES, criterion: str = "aic"):
        if name not in TEST_NAMES:
            raise ConfigurationError(f"unknown test {name!r}; choose from {', '.join(TEST_NAMES)}")
        self.name = name
        self.data = as_sample(data)
        self.alpha = _check_alpha(alpha)
        self.seed = seed
        self.n_perm = n_perm
        self.candidates = tuple(candidates)
        self.criterion = criterion

    @property
    def variables(self) -> tuple:
        return self.data.columns

    def __call__(self, i, j, K: Iterable = ()) -> TestResult:
        if self.name == "COR":
            return fisher_z_test(self.data, i, j, K, self.alpha)
        vine_class, inner = self.name.split("-")
        return vine_ci_test(self.data, i, j, K, vine_class, inner, self.alpha, self.candidates,
                            self.criterion, self.seed, self.n_perm)


class OracleTest:
    """d-separation in a known DAG, reported as p-value 1 (separated) or 0."""

    name = "ORACLE"

    def __init__(self, dag: Dag, alpha: float = 0.05):
        self.dag = dag
        self.alpha = _check_alpha(alpha)

    @property
    def variables(self) -> tuple:
        return tuple(self.dag.vertices)

    def __call__(self, i, j, K: Iterable = ()) -> TestResult:
        sep = d_separated(self.dag, {str(i)}, {str(j)}, {str(k) for k in K})
        return TestResult(float(not sep), 1.0 if sep else 0.0, self.alpha, self.name)


def make_test(name: str, data=None, alpha: float = 0.05, **kwargs) -> Callable:
    """Test handle by name; ``name="ORACLE"`` expects ``data`` to be a :class:`Dag`."""
    if name == "ORACLE":
        return OracleTest(data, alpha)
    return CITest(name, data, alpha, **kwargs)
