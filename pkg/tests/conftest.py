import numpy as np
import pytest
from scipy import stats

from pcbn.graphs import Dag

DIAMOND = Dag("1234", [("1", "2"), ("1", "3"), ("2", "4"), ("3", "4")], {"4": ["2", "3"]})
SEVEN = Dag("1234567", [("1", "2"), ("1", "3"), ("2", "4"), ("1", "4"), ("4", "5"), ("3", "5"),
                       ("5", "6"), ("4", "6"), ("3", "6"), ("2", "6"), ("5", "7"), ("6", "7"),
                       ("3", "7")],
           {"4": ["2", "1"], "5": ["4", "3"], "6": ["5", "4", "3", "2"], "7": ["5", "6", "3"]})


def gaussian_correlation(dag: Dag, partial: dict) -> np.ndarray:
    """Correlation matrix of a Gaussian DAG model from its edge partial correlations.

    ``partial[(w, v)]`` is the partial correlation of ``v`` and ``w`` given the
    parents of ``v`` preceding ``w``.  Covariances with non-parents follow from
    the local Markov property.
    """
    order = list(dag.well_order())
    idx = {v: k for k, v in enumerate(order)}
    d = len(order)
    R = np.eye(d)

    def reg(a, S, b):
        if not S:
            return 0.0
        s = [idx[x] for x in S]
        return R[idx[a], s] @ np.linalg.solve(R[np.ix_(s, s)], R[s, idx[b]])

    for v in order:
        pa = list(dag.parents(v))
        for j, w in enumerate(pa):
            S = pa[:j]
            var_v = 1.0 - reg(v, S, v)
            var_w = 1.0 - reg(w, S, w)
            val = partial[(w, v)] * np.sqrt(var_v * var_w) + reg(v, S, w)
            R[idx[v], idx[w]] = R[idx[w], idx[v]] = val
        if pa:
            P = [idx[p] for p in pa]
            beta = np.linalg.solve(R[np.ix_(P, P)], R[P, idx[v]])
            for x in order[:order.index(v)]:
                if x not in pa:
                    R[idx[v], idx[x]] = R[idx[x], idx[v]] = beta @ R[P, idx[x]]
    perm = [idx[v] for v in dag.vertices]
    return R[np.ix_(perm, perm)]


def gaussian_copula_logpdf(R: np.ndarray, u: np.ndarray) -> np.ndarray:
    z = stats.norm.ppf(u)
    mvn = stats.multivariate_normal(np.zeros(len(R)), R)
    return mvn.logpdf(z) - stats.norm.logpdf(z).sum(axis=-1)


@pytest.fixture
def diamond():
    return DIAMOND


@pytest.fixture
def seven():
    return SEVEN
