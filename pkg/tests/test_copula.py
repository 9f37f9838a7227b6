import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from pcbn.copula import (
    FAMILIES,
    PairCopula,
    canonical_family,
    copula_cdf,
    copula_from_tau,
    copula_pdf,
    fit_copula,
    h_function,
    h_inverse,
    information_criterion,
    kendall_tau,
    loglik,
    sample,
    select_copula,
    tail_dependence,
    tau_inverse,
)
from pcbn.exceptions import ParameterError

COPULAS = [
    PairCopula("Independence"),
    PairCopula("Gaussian", (0.5,)),
    PairCopula("Gaussian", (-0.7,)),
    PairCopula("StudentT", (0.38, 5.0)),
    PairCopula("StudentT", (-0.6, 3.0)),
    PairCopula("Clayton", (2.0,)),
    PairCopula("Clayton", (6.0,), 180),
    PairCopula("Clayton", (1.0,), 90),
    PairCopula("Gumbel", (1.33,)),
    PairCopula("Gumbel", (4.0,), 270),
    PairCopula("Frank", (5.0,)),
    PairCopula("Frank", (-3.0,)),
]
IDS = [str(c) for c in COPULAS]


def _grid(n=7):
    g = np.linspace(0.05, 0.95, n)
    u, v = np.meshgrid(g, g)
    return u.ravel(), v.ravel()


class TestConstruction:
    def test_aliases(self):
        assert canonical_family("t") == "StudentT"
        assert canonical_family("gauss") == "Gaussian"
        with pytest.raises(ParameterError):
            canonical_family("Joe")

    @pytest.mark.parametrize("family, params", [
        ("Gaussian", (1.0,)), ("StudentT", (0.5, 1.5)), ("Clayton", (0.0,)),
        ("Gumbel", (0.9,)), ("Frank", (0.0,)), ("Independence", (0.3,)), ("Gaussian", ()),
    ])
    def test_invalid_params(self, family, params):
        with pytest.raises(ParameterError):
            PairCopula(family, params)

    def test_bad_rotation(self):
        with pytest.raises(ParameterError):
            PairCopula("Clayton", (1.0,), 45)

    @pytest.mark.parametrize("c", COPULAS, ids=IDS)
    def test_dict_roundtrip(self, c):
        assert PairCopula.from_dict(c.to_dict()) == c


class TestClosedForms:
    def test_independence(self):
        c = PairCopula("Independence")
        assert_allclose(copula_cdf(c, 0.3, 0.7), 0.21)
        assert_allclose(copula_pdf(c, 0.2, 0.9), 1.0)
        assert_allclose(h_function(c, 0.3, 0.8), 0.3)
        assert_allclose(h_inverse(c, 0.3, 0.8), 0.3)

    @pytest.mark.parametrize("c", COPULAS, ids=IDS)
    def test_uniform_margins(self, c):
        assert_allclose(copula_cdf(c, 0.4, 1.0), 0.4, atol=1e-9)
        assert_allclose(copula_cdf(c, 1.0, 0.4), 0.4, atol=1e-9)

    def test_clayton_values(self):
        c = PairCopula("Clayton", (2.0,))
        assert_allclose(copula_cdf(c, 0.5, 0.5), 7 ** -0.5, rtol=1e-12)
        assert_allclose(h_function(c, 0.5, 0.5), 8 * 7 ** -1.5, rtol=1e-12)
        # (1 + th) (uv)^(-th-1) (u^-th + v^-th - 1)^(-1/th-2) at th = 2
        assert_allclose(copula_pdf(c, 0.5, 0.5), 3 * 64 * 7 ** -2.5, rtol=1e-12)
        assert_allclose(copula_pdf(c, 0.5, 0.5), 1.4810, atol=5e-5)
        assert_allclose(h_inverse(c, 8 * 7 ** -1.5, 0.5), 0.5, atol=1e-10)

    def test_gaussian_values(self):
        c = PairCopula("Gaussian", (0.5,))
        assert_allclose(copula_pdf(c, 0.5, 0.5), 1 / math.sqrt(0.75), rtol=1e-12)
        assert_allclose(h_function(c, 0.5, 0.5), 0.5)
        assert_allclose(h_inverse(c, 0.5, 0.5), 0.5)

    @pytest.mark.parametrize("rho", [-0.8, 0.2, 0.9])
    def test_gaussian_cdf_oracle(self, rho):
        u, v = _grid(4)
        mvn = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]])
        ref = mvn.cdf(np.column_stack([stats.norm.ppf(u), stats.norm.ppf(v)]))
        assert_allclose(copula_cdf(PairCopula("Gaussian", (rho,)), u, v), ref, atol=1e-6)

    @pytest.mark.parametrize("rho, nu", [(0.38, 5.0), (-0.5, 3.0), (0.92, 10.0)])
    def test_studentt_pdf_oracle(self, rho, nu):
        u, v = _grid(5)
        x, y = stats.t.ppf(u, nu), stats.t.ppf(v, nu)
        mvt = stats.multivariate_t([0, 0], [[1, rho], [rho, 1]], df=nu)
        ref = mvt.pdf(np.column_stack([x, y])) / (stats.t.pdf(x, nu) * stats.t.pdf(y, nu))
        assert_allclose(copula_pdf(PairCopula("StudentT", (rho, nu)), u, v), ref, rtol=1e-8)

    def test_frank_cdf_closed_form(self):
        th = 5.0
        u, v = _grid(5)
        ref = -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / np.expm1(-th)) / th
        assert_allclose(copula_cdf(PairCopula("Frank", (th,)), u, v), ref, rtol=1e-12)

    def test_gumbel_cdf_closed_form(self):
        th = 1.33
        u, v = _grid(5)
        ref = np.exp(-((-np.log(u)) ** th + (-np.log(v)) ** th) ** (1 / th))
        assert_allclose(copula_cdf(PairCopula("Gumbel", (th,)), u, v), ref, rtol=1e-12)


@pytest.mark.parametrize("c", COPULAS, ids=IDS)
class TestDerivatives:
    def test_h_first_is_dC_dv(self, c):
        u, v = _grid()
        d = 1e-6
        fd = (copula_cdf(c, u, v + d) - copula_cdf(c, u, v - d)) / (2 * d)
        assert_allclose(h_function(c, u, v, "first"), fd, atol=1e-6)

    def test_h_second_is_dC_du(self, c):
        u, v = _grid()
        d = 1e-6
        fd = (copula_cdf(c, u + d, v) - copula_cdf(c, u - d, v)) / (2 * d)
        assert_allclose(h_function(c, u, v, "second"), fd, atol=1e-6)

    def test_pdf_is_dh(self, c):
        u, v = _grid()
        d = 1e-5
        fd = (h_function(c, u + d, v, "first") - h_function(c, u - d, v, "first")) / (2 * d)
        assert_allclose(copula_pdf(c, u, v), fd, rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("side", ["first", "second"])
    def test_h_inverse_roundtrip(self, c, side):
        q, w = _grid(9)
        x = h_inverse(c, q, w, side)
        back = h_function(c, x, w, side) if side == "first" else h_function(c, w, x, side)
        assert_allclose(back, q, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(ci=st.integers(0, len(COPULAS) - 1),
       u=st.floats(1e-4, 1 - 1e-4), v=st.floats(1e-4, 1 - 1e-4))
def test_h_in_unit_interval_and_monotone(ci, u, v):
    c = COPULAS[ci]
    h = h_function(c, u, v, "first")
    assert 0.0 <= h <= 1.0
    assert h_function(c, min(u + 1e-3, 1.0), v, "first") >= h - 1e-12
    assert copula_pdf(c, u, v) >= 0.0
    # Frechet bounds
    cdf = copula_cdf(c, u, v)
    assert max(u + v - 1, 0) - 1e-12 <= cdf <= min(u, v) + 1e-12


class TestTau:
    @pytest.mark.parametrize("c, tau", [
        (PairCopula("Clayton", (0.67,)), 0.25),
        (PairCopula("Clayton", (6.0,)), 0.75),
        (PairCopula("Gumbel", (1.33,)), 0.25),
        (PairCopula("Gumbel", (4.0,)), 0.75),
        (PairCopula("Gaussian", (0.38,)), 0.25),
        (PairCopula("Gaussian", (0.92,)), 0.75),
        (PairCopula("StudentT", (0.38, 5.0)), 0.25),
        (PairCopula("StudentT", (0.92, 5.0)), 0.75),
        (PairCopula("Independence"), 0.0),
    ])
    def test_table_values(self, c, tau):
        # table parameters are rounded to two decimals
        assert_allclose(kendall_tau(c), tau, atol=0.01)

    @pytest.mark.parametrize("family, tau, params", [
        ("Gaussian", 0.75, (0.92,)), ("Clayton", 0.75, (6.0,)), ("Gumbel", 0.75, (4.0,)),
        ("Clayton", 0.25, (0.67,)), ("Gumbel", 0.25, (1.33,)),
    ])
    def test_inverse_table_values(self, family, tau, params):
        assert_allclose(tau_inverse(family, tau), params, atol=0.005)

    @pytest.mark.parametrize("family", ["Gaussian", "StudentT", "Clayton", "Gumbel", "Frank"])
    @pytest.mark.parametrize("tau", [0.1, 0.25, 0.5, 0.75, 0.9])
    def test_roundtrip(self, family, tau):
        assert_allclose(kendall_tau(PairCopula(family, tau_inverse(family, tau))), tau, atol=1e-10)

    def test_frank_against_numeric_integral(self):
        # tau = 4 E[C(U, V)] - 1, integrated on a midpoint grid
        c = PairCopula("Frank", (5.0,))
        g = (np.arange(400) + 0.5) / 400
        u, v = np.meshgrid(g, g)
        ref = 4 * np.mean(copula_cdf(c, u, v) * copula_pdf(c, u, v)) - 1
        assert_allclose(kendall_tau(c), ref, atol=1e-3)

    def test_rotation_sign(self):
        assert kendall_tau(PairCopula("Gumbel", (2.0,), 90)) == -0.5
        assert kendall_tau(PairCopula("Gumbel", (2.0,), 180)) == 0.5

    def test_zero_and_negative(self):
        assert copula_from_tau("Clayton", 0.0).family == "Independence"
        c = copula_from_tau("Gumbel", -0.5)
        assert c.rotation == 90
        assert_allclose(kendall_tau(c), -0.5)
        with pytest.raises(ParameterError):
            tau_inverse("Clayton", -0.2)
        with pytest.raises(ParameterError):
            tau_inverse("Gaussian", 1.0)


class TestTailDependence:
    @pytest.mark.parametrize("c, lam", [
        (PairCopula("Clayton", (0.67,)), (0.35, 0.0)),
        (PairCopula("Clayton", (6.0,)), (0.89, 0.0)),
        (PairCopula("Gumbel", (1.33,)), (0.0, 0.32)),
        (PairCopula("Gumbel", (4.0,)), (0.0, 0.81)),
        (PairCopula("Gaussian", (0.92,)), (0.0, 0.0)),
        (PairCopula("StudentT", (0.38, 5.0)), (0.152, 0.152)),
        (PairCopula("StudentT", (0.92, 5.0)), (0.635, 0.635)),
    ])
    def test_values(self, c, lam):
        assert_allclose(tail_dependence(c), lam, atol=0.01)

    @pytest.mark.parametrize("c", [PairCopula("Clayton", (2.0,)), PairCopula("StudentT", (0.7, 4.0))])
    def test_lower_tail_limit(self, c):
        u = 1e-7
        assert_allclose(copula_cdf(c, u, u) / u, tail_dependence(c)[0], atol=5e-3)

    def test_survival_rotation_swaps_tails(self):
        lo, up = tail_dependence(PairCopula("Gumbel", (2.0,), 180))
        assert up == 0.0 and lo > 0.5


class TestSampling:
    @pytest.mark.parametrize("c, tau", [
        (PairCopula("Independence"), 0.0),
        (PairCopula("Clayton", (6.0,)), 0.75),
        (PairCopula("Frank", (-3.0,)), None),
        (PairCopula("StudentT", (0.38, 5.0)), 0.25),
    ])
    def test_empirical_tau(self, c, tau):
        x = sample(c, 100_000, 1)
        tau = kendall_tau(c) if tau is None else tau
        assert abs(stats.kendalltau(x[:, 0], x[:, 1]).statistic - tau) < 0.01

    def test_gumbel_upper_tail(self):
        x = sample(PairCopula("Gumbel", (1.33,)), 100_000, 2)
        q = 0.99
        lam = np.mean((x[:, 0] > q) & (x[:, 1] > q)) / (1 - q)
        assert abs(lam - 0.32) < 0.05

    @pytest.mark.parametrize("c", COPULAS, ids=IDS)
    def test_uniform_margins(self, c):
        x = sample(c, 5000, 3)
        assert stats.kstest(x[:, 1], "uniform").pvalue > 1e-3

    def test_seeded(self):
        c = PairCopula("Gumbel", (2.0,))
        assert np.array_equal(sample(c, 50, 5), sample(c, 50, 5))


class TestFit:
    @pytest.mark.parametrize("c", [
        PairCopula("Gaussian", (0.5,)), PairCopula("Clayton", (3.0,)),
        PairCopula("Gumbel", (2.0,), 180), PairCopula("Frank", (-4.0,)),
        PairCopula("StudentT", (0.6, 4.0)),
    ], ids=str)
    def test_recovers_parameter(self, c):
        x = sample(c, 3000, 11)
        f = fit_copula(c.family, x[:, 0], x[:, 1], c.rotation)
        assert_allclose(kendall_tau(f), kendall_tau(c), atol=0.03)
        assert loglik(f, x[:, 0], x[:, 1]) >= loglik(c, x[:, 0], x[:, 1]) - 1e-6

    def test_studentt_nu(self):
        c = PairCopula("StudentT", (0.7, 4.0))
        x = sample(c, 5000, 12)
        f = fit_copula("StudentT", x[:, 0], x[:, 1])
        assert 2.5 < f.params[1] < 8.0

    @pytest.mark.parametrize("c", [PairCopula("Clayton", (6.0,)), PairCopula("Gumbel", (4.0,))], ids=str)
    def test_selection(self, c):
        x = sample(c, 2000, 13)
        sel = select_copula(x[:, 0], x[:, 1], ("Clayton", "Gaussian", "Gumbel"))
        assert sel.family == c.family

    def test_select_independence(self):
        rng = np.random.default_rng(14)
        u, v = rng.random(500), rng.random(500)
        sel = select_copula(u, v, ("Independence", "Gaussian", "Clayton"), "bic")
        assert sel.family == "Independence"

    def test_negative_dependence_rotates(self):
        x = sample(PairCopula("Clayton", (3.0,), 90), 2000, 15)
        sel = select_copula(x[:, 0], x[:, 1], ("Clayton",))
        assert sel.rotation == 90

    def test_information_criterion(self):
        assert information_criterion(10.0, 2, 100) == -16.0
        assert_allclose(information_criterion(10.0, 2, 100, "bic"), 2 * math.log(100) - 20)
        with pytest.raises(ValueError):
            information_criterion(1.0, 1, 10, "hqc")


def test_families_listed():
    assert set(FAMILIES) == {"Independence", "Gaussian", "StudentT", "Clayton", "Gumbel", "Frank"}
