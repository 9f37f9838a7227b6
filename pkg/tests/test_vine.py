import json

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from pcbn.copula import PairCopula, copula_from_tau, copula_logpdf, copula_pdf, h_function
from pcbn.exceptions import ConfigurationError, StructureError
from pcbn.io import Sample
from pcbn.vine import (
    RVine,
    VineEdge,
    build_constrained_vine,
    check_rule_r,
    fit_vine_sequential,
    independence_vine,
    rosenblatt_transform,
    rvine_density,
    rvine_loglik,
    simulate_vine,
    validate_vine,
)


def _g(rho):
    return PairCopula("Gaussian", (rho,))


def five_vine(cop=lambda k: _g(0.3 + 0.04 * k)):
    """Five-variable R-vine with top edge 1,5|2,3,4."""
    labels = [[("1", "2", ()), ("2", "3", ()), ("2", "5", ()), ("3", "4", ())],
              [("1", "3", ("2",)), ("2", "4", ("3",)), ("3", "5", ("2",))],
              [("1", "4", ("2", "3")), ("4", "5", ("2", "3"))],
              [("1", "5", ("2", "3", "4"))]]
    k = iter(range(10))
    trees = [[VineEdge((a, b), d, cop(next(k))) for a, b, d in t] for t in labels]
    return RVine("12345", trees)


def dvine3(c12, c23, c13_2):
    return RVine("123", [[VineEdge(("1", "2"), (), c12), VineEdge(("2", "3"), (), c23)],
                         [VineEdge(("1", "3"), ("2",), c13_2)]])


class TestStructure:
    def test_five_valid(self):
        v = five_vine()
        assert v.top_edge.label == "1,5|2,3,4"
        assert check_rule_r(v, "1", "5")
        assert not check_rule_r(v, "2", "3")

    def test_proximity_violation(self):
        with pytest.raises(StructureError):
            RVine("1234", [[VineEdge(("1", "2")), VineEdge(("2", "3")), VineEdge(("3", "4"))],
                           [VineEdge(("1", "4"), ("2",)), VineEdge(("2", "4"), ("3",))],
                           [VineEdge(("1", "4"), ("2", "3"))]])

    def test_cycle(self):
        with pytest.raises(StructureError):
            validate_vine("123", [[VineEdge(("1", "2")), VineEdge(("2", "1"))],
                                  [VineEdge(("1", "3"), ("2",))]])

    @pytest.mark.parametrize("trees", [[], [[VineEdge(("1", "2"))]]])
    def test_wrong_sizes(self, trees):
        with pytest.raises(StructureError):
            validate_vine("123", trees)

    def test_bad_edge(self):
        with pytest.raises(StructureError):
            VineEdge(("1", "1"))
        with pytest.raises(StructureError):
            VineEdge(("1", "2"), ("1",))

    def test_dict_roundtrip(self):
        v = five_vine(lambda k: PairCopula("Clayton", (1.0 + k,), 90 * (k % 2)))
        assert RVine.from_dict(json.loads(json.dumps(v.to_dict()))) == v

    def test_independence_vine(self):
        v = independence_vine("abcd")
        assert [e.label for e in v.trees[-1]] == ["a,d|b,c"]


class TestDensity:
    def test_independence(self):
        u = np.random.default_rng(0).random((50, 5))
        assert_allclose(independence_vine("12345").density(u), 1.0)
        assert rvine_loglik(independence_vine("12345"), u) == 0.0

    def test_single_edge(self):
        c = PairCopula("Gumbel", (2.0,))
        v = RVine("ab", [[VineEdge(("a", "b"), (), c)]])
        u = np.random.default_rng(1).random((40, 2))
        assert_allclose(v.density(u), copula_pdf(c, u[:, 0], u[:, 1]), rtol=1e-12)
        assert_allclose(rvine_loglik(v, u), np.sum(copula_logpdf(c, u[:, 0], u[:, 1])), rtol=1e-12)

    def test_dvine3_product_formula(self):
        c12, c23, c13 = PairCopula("Clayton", (2.0,)), PairCopula("Frank", (-3.0,)), PairCopula("Gumbel", (1.7,))
        u = np.random.default_rng(2).random((100, 3))
        u1, u2, u3 = u.T
        f = (copula_pdf(c12, u1, u2) * copula_pdf(c23, u2, u3)
             * copula_pdf(c13, h_function(c12, u1, u2, "first"), h_function(c23, u2, u3, "second")))
        assert_allclose(rvine_density(dvine3(c12, c23, c13), u), f, rtol=1e-12)

    def test_gaussian_vine_matches_correlation(self):
        # Gaussian D-vine on three variables: r13 = p13|2 * sqrt((1-r12^2)(1-r23^2)) + r12 r23
        r12, r23, p = 0.6, -0.4, 0.3
        R = np.eye(3)
        R[0, 1] = R[1, 0] = r12
        R[1, 2] = R[2, 1] = r23
        R[0, 2] = R[2, 0] = p * np.sqrt((1 - r12 ** 2) * (1 - r23 ** 2)) + r12 * r23
        u = np.random.default_rng(3).uniform(0.01, 0.99, (50, 3))
        z = stats.norm.ppf(u)
        ref = stats.multivariate_normal(np.zeros(3), R).logpdf(z) - stats.norm.logpdf(z).sum(1)
        assert_allclose(dvine3(_g(r12), _g(r23), _g(p)).log_density(u), ref, atol=1e-10)

    def test_five_normalisation(self):
        u = np.random.default_rng(4).random((200_000, 5))
        f = five_vine().density(u)
        assert abs(f.mean() - 1) < 3 * f.std() / np.sqrt(f.size)

    def test_recursion_in_unit_interval(self):
        v = five_vine(lambda k: PairCopula("Clayton", (3.0,), 180 * (k % 2)))
        pseudo, _ = v.recursion(np.random.default_rng(5).random((500, 5)))
        assert all(np.all((x >= 0) & (x <= 1)) for x in pseudo.values())


class TestSimulate:
    def test_margins_and_tau(self):
        v = five_vine(lambda k: copula_from_tau("Clayton", 0.5) if k < 4 else PairCopula("Independence"))
        s = simulate_vine(v, 20_000, 0)
        for c in s.columns:
            assert stats.kstest(s.column(c), "uniform").pvalue > 1e-3
        for e in v.trees[0]:
            a, b = e.conditioned
            assert abs(stats.kendalltau(s.column(a), s.column(b)).statistic - 0.5) < 0.02

    def test_seeded(self):
        v = five_vine()
        assert np.array_equal(simulate_vine(v, 50, 3).values, simulate_vine(v, 50, 3).values)


def _dvine_path_sample(path, n, seed):
    """Four-variable D-vine along ``path`` with tau 0.7 in the first tree."""
    rho1 = np.sin(np.pi / 2 * 0.7)
    rho2 = np.sin(np.pi / 2 * 0.2)
    a, b, c, d = path
    v = RVine(sorted(path), [
        [VineEdge((a, b), (), _g(rho1)), VineEdge((b, c), (), _g(rho1)), VineEdge((c, d), (), _g(rho1))],
        [VineEdge((a, c), (b,), _g(rho2)), VineEdge((b, d), (c,), _g(rho2))],
        [VineEdge((a, d), (b, c), _g(rho2))]])
    return simulate_vine(v, n, seed)


class TestFit:
    def test_two_variables(self):
        s = simulate_vine(RVine("ab", [[VineEdge(("a", "b"), (), PairCopula("Clayton", (3.0,)))]]), 1000, 0)
        v = fit_vine_sequential(s)
        assert v.dim == 2 and v.edges[0].copula.family == "Clayton"
        assert abs(v.edges[0].copula.params[0] - 3.0) < 0.5

    @pytest.mark.parametrize("cls", ["C", "D", "R"])
    def test_proximity_and_loglik(self, cls):
        s = simulate_vine(five_vine(), 500, 1)
        v = fit_vine_sequential(s, cls)
        validate_vine(v.variables, v.trees)
        assert v.loglik(s) >= independence_vine(s.columns).loglik(s)
        if cls == "C":
            for t, tree in enumerate(v.trees):
                common = set.intersection(*({*e.conditioned} | set(e.conditioning) for e in tree))
                assert len(tree) == 1 or len(common) >= t + 1

    def test_dvine_path_recovery(self):
        path = ("c", "a", "d", "b")
        truth = {frozenset(p) for p in zip(path, path[1:])}
        hits = 0
        for r in range(100):
            s = _dvine_path_sample(path, 1000, r)
            v = fit_vine_sequential(s, "D", candidates=("Gaussian",))
            hits += {frozenset(e.conditioned) for e in v.trees[0]} == truth
        assert hits >= 90

    def test_independent_data(self):
        # each one-parameter family passes AIC by chance with probability about 0.16
        aic = bic = 0
        for r in range(10):
            s = Sample(list("abcd"), np.random.default_rng(r).random((500, 4)))
            aic += sum(e.copula.family == "Independence" for e in fit_vine_sequential(s).edges)
            bic += sum(e.copula.family == "Independence"
                       for e in fit_vine_sequential(s, criterion="bic").edges)
        assert aic >= 30 and bic >= 54

    def test_unknown_class(self):
        with pytest.raises(ConfigurationError):
            fit_vine_sequential(np.random.default_rng(0).random((20, 3)), "X")


@pytest.fixture(scope="module")
def data():
    return simulate_vine(five_vine(), 800, 7)


class TestConstrained:
    @pytest.mark.parametrize("cls", ["C", "D", "R"])
    def test_singleton_shape(self, data, cls):
        v = build_constrained_vine(data, "1", "5", ["3"], cls)
        assert {frozenset(e.conditioned) for e in v.trees[0]} == {frozenset("13"), frozenset("35")}
        assert v.top_edge.label == "1,5|3"

    @pytest.mark.parametrize("cls", ["C", "D", "R"])
    def test_rule_r(self, data, cls):
        v = build_constrained_vine(data, "1", "5", ["2", "3", "4"], cls)
        validate_vine(v.variables, v.trees)
        assert v.top_edge.label == "1,5|2,3,4"
        assert check_rule_r(v, "1", "5")

    def test_c_roots_from_k(self, data):
        v = build_constrained_vine(data, "1", "5", ["2", "3", "4"], "C")
        for tree in v.trees[:-1]:
            if len(tree) > 1:
                nodes = [frozenset(e.conditioning) | {x} for e in tree for x in e.conditioned]
                root = max(set(nodes), key=nodes.count)
                assert "1" not in root and "5" not in root

    def test_d_endpoints(self, data):
        v = build_constrained_vine(data, "1", "5", ["2", "3", "4"], "D")
        deg = {}
        for e in v.trees[0]:
            for x in e.conditioned:
                deg[x] = deg.get(x, 0) + 1
        assert deg["1"] == deg["5"] == 1 and max(deg.values()) == 2

    def test_five_is_valid_r_output(self):
        # the generating five-variable structure satisfies every constraint the R-class imposes
        v = five_vine()
        assert check_rule_r(v, "1", "5") and v.top_edge.label == "1,5|2,3,4"

    @pytest.mark.parametrize("K", [[], ["1"]])
    def test_bad_sets(self, data, K):
        with pytest.raises(StructureError):
            build_constrained_vine(data, "1", "5", K)


class TestRosenblatt:
    def test_independence_identity(self):
        u = np.random.default_rng(0).random((100, 3))
        v = independence_vine(["i", "k", "j"])
        wi, wj = rosenblatt_transform(v, Sample(["i", "k", "j"], u), "i", "j", ["k"])
        assert_allclose(wi, u[:, 0]) and assert_allclose(wj, u[:, 2])

    def test_uniformity_at_truth(self):
        v = dvine3(PairCopula("Clayton", (3.0,)), PairCopula("Gumbel", (2.0,)), PairCopula("Frank", (5.0,)))
        passes = 0
        for r in range(100):
            s = simulate_vine(v, 500, r)
            wi, wj = rosenblatt_transform(v, s, "1", "3", ["2"])
            passes += stats.kstest(wi, "uniform").pvalue > 0.01 and stats.kstest(wj, "uniform").pvalue > 0.01
        assert passes >= 95

    def test_conditional_independence(self):
        v = dvine3(PairCopula("Clayton", (3.0,)), PairCopula("Gumbel", (2.0,)), PairCopula("Independence"))
        n = 5000
        s = simulate_vine(v, n, 11)
        fitted = build_constrained_vine(s, "1", "3", ["2"], fit_top=False)
        wi, wj = rosenblatt_transform(fitted, s, "1", "3", ["2"])
        assert abs(np.corrcoef(wi, wj)[0, 1]) < 3 / np.sqrt(n)

    def test_wrong_top(self):
        with pytest.raises(StructureError):
            rosenblatt_transform(five_vine(), np.random.default_rng(0).random((5, 5)), "1", "4")
