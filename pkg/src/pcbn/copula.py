"""Bivariate parametric copulas.

Six families are supported: ``Independence``, ``Gaussian``, ``StudentT``,
``Clayton``, ``Gumbel`` and ``Frank``.  Each may be rotated by 0, 90, 180 or
270 degrees.  All functions are vectorised over their array arguments.

The h-function follows the convention used throughout the package: for a
copula ``C(u, v)``

* ``h_function(c, u, v, "first")``  is ``dC/dv``, the conditional cdf of the
  first argument given the second;
* ``h_function(c, u, v, "second")`` is ``dC/du``, the conditional cdf of the
  second argument given the first.

The underlined (conditioned) argument is the one whose conditional cdf is
returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

from .exceptions import ParameterError

FAMILIES = ("Independence", "Gaussian", "StudentT", "Clayton", "Gumbel", "Frank")
ROTATIONS = (0, 90, 180, 270)

EPS = 1e-12
NU_BOUNDS = (2.05, 100.0)

_N_PARAMS = {
    "Independence": 0,
    "Gaussian": 1,
    "StudentT": 2,
    "Clayton": 1,
    "Gumbel": 1,
    "Frank": 1,
}

_ALIASES = {
    "independence": "Independence",
    "indep": "Independence",
    "i": "Independence",
    "gaussian": "Gaussian",
    "gauss": "Gaussian",
    "normal": "Gaussian",
    "n": "Gaussian",
    "studentt": "StudentT",
    "student": "StudentT",
    "t": "StudentT",
    "clayton": "Clayton",
    "c": "Clayton",
    "gumbel": "Gumbel",
    "g": "Gumbel",
    "frank": "Frank",
    "f": "Frank",
}


def canonical_family(name: str) -> str:
    """Return the canonical spelling of a family name."""
    key = str(name).replace("-", "").replace("_", "").replace(" ", "").lower()
    if key not in _ALIASES:
        raise ParameterError(f"unknown copula family {name!r}")
    return _ALIASES[key]


@dataclass(frozen=True)
class PairCopula:
    """A parametric bivariate copula.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    params : tuple of float
        ``()`` for Independence, ``(rho,)`` for Gaussian, ``(rho, nu)`` for
        StudentT and ``(theta,)`` for the Archimedean families.
    rotation : int
        Counter-clockwise rotation in degrees, one of 0, 90, 180, 270.
    """

    family: str
    params: tuple = field(default=())
    rotation: int = 0

    def __post_init__(self):
        fam = canonical_family(self.family)
        object.__setattr__(self, "family", fam)
        raw = self.params
        if np.isscalar(raw):
            raw = (raw,)
        params = tuple(float(p) for p in raw)
        object.__setattr__(self, "params", params)
        rot = int(self.rotation)
        if rot not in ROTATIONS:
            raise ParameterError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        object.__setattr__(self, "rotation", rot)
        _validate(fam, params)

    @property
    def n_params(self) -> int:
        return _N_PARAMS[self.family]

    def to_dict(self) -> dict:
        return {"family": self.family, "rotation": self.rotation, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "PairCopula":
        try:
            return cls(d["family"], tuple(d.get("params", ())), int(d.get("rotation", 0)))
        except KeyError as exc:
            raise ParameterError(f"copula object lacks field {exc}") from None

    def __str__(self):
        rot = f"{self.rotation}" if self.rotation else ""
        par = ", ".join(f"{p:.4g}" for p in self.params)
        return f"{self.family}{rot}({par})"


def _validate(family: str, params: tuple) -> None:
    k = _N_PARAMS[family]
    if len(params) != k:
        raise ParameterError(f"{family} expects {k} parameter(s), got {len(params)}")
    if not all(math.isfinite(p) for p in params):
        raise ParameterError(f"non-finite parameter for {family}: {params}")
    if family in ("Gaussian", "StudentT"):
        if not -1.0 < params[0] < 1.0:
            raise ParameterError(f"{family} correlation must lie in (-1, 1), got {params[0]}")
        if family == "StudentT" and not params[1] > 2.0:
            raise ParameterError(f"StudentT degrees of freedom must exceed 2, got {params[1]}")
    elif family == "Clayton" and not params[0] > 0.0:
        raise ParameterError(f"Clayton theta must be positive, got {params[0]}")
    elif family == "Gumbel" and not params[0] >= 1.0:
        raise ParameterError(f"Gumbel theta must be >= 1, got {params[0]}")
    elif family == "Frank" and params[0] == 0.0:
        raise ParameterError("Frank theta must be nonzero")


def _clip(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


def _out(x):
    x = np.asarray(x, dtype=float)
    return x[()] if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# Unrotated families.  ``_h`` is dC/dv, the cdf of the first argument given
# the second; ``_hinv`` inverts it in the first argument.  All inputs are
# already clipped to the open unit interval.


def _bvn_cdf(h, k, rho):
    """Standard bivariate normal cdf via Owen's T function."""
    h, k = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float))
    h = np.where(h == 0.0, 1e-300, h)
    k = np.where(k == 0.0, 1e-300, k)
    s = math.sqrt((1.0 - rho) * (1.0 + rho))
    ah = (k - rho * h) / (h * s)
    ak = (h - rho * k) / (k * s)
    beta = np.where(h * k > 0, 0.0, 0.5)
    res = 0.5 * (special.ndtr(h) + special.ndtr(k)) - special.owens_t(h, ah) \
        - special.owens_t(k, ak) - beta
    return np.clip(res, 0.0, 1.0)


class _Independence:
    @staticmethod
    def cdf(u, v, p):
        return u * v

    @staticmethod
    def logpdf(u, v, p):
        return np.zeros(np.broadcast(u, v).shape)

    @staticmethod
    def h(u, v, p):
        return np.broadcast_arrays(u, v)[0].copy()

    @staticmethod
    def hinv(q, v, p):
        return np.broadcast_arrays(q, v)[0].copy()


class _Gaussian:
    @staticmethod
    def cdf(u, v, p):
        return _bvn_cdf(special.ndtri(u), special.ndtri(v), p[0])

    @staticmethod
    def logpdf(u, v, p):
        r = p[0]
        x, y = special.ndtri(u), special.ndtri(v)
        om = 1.0 - r * r
        return -0.5 * math.log(om) - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * om)

    @staticmethod
    def h(u, v, p):
        r = p[0]
        return special.ndtr((special.ndtri(u) - r * special.ndtri(v)) / math.sqrt(1.0 - r * r))

    @staticmethod
    def hinv(q, v, p):
        r = p[0]
        return special.ndtr(r * special.ndtri(v) + math.sqrt(1.0 - r * r) * special.ndtri(q))


def _t_ppf(nu: float, u):
    """Student t quantile through the incomplete beta inverse."""
    u = np.asarray(u, dtype=float)
    if u.size > 512:
        # quadrature nodes repeat across rows; betaincinv dominates the cost
        uniq, inv = np.unique(u, return_inverse=True)
        if uniq.size < 0.7 * u.size:
            return _t_ppf(nu, uniq)[inv.reshape(u.shape)]
    x = np.empty_like(u)
    a = np.minimum(u, 1.0 - u)
    tail = a < 0.25
    z = special.betaincinv(nu / 2.0, 0.5, 2.0 * a[tail])
    x[tail] = np.sqrt(nu * (1.0 / z - 1.0))
    w = special.betaincinv(0.5, nu / 2.0, np.abs(2.0 * u[~tail] - 1.0))
    x[~tail] = np.sqrt(nu * w / (1.0 - w))
    return np.where(u < 0.5, -x, x)


class _StudentT:
    @staticmethod
    def cdf(u, v, p):
        # normal variance mixture t = Z / sqrt(W / nu), W ~ chi2(nu); the mixing
        # integral is a trapezoid rule in log W, exponentially convergent here
        r, nu = p
        u, v = np.broadcast_arrays(u, v)
        x = _t_ppf(nu, u).ravel()
        y = _t_ppf(nu, v).ravel()
        z = np.linspace(math.log(stats.chi2.ppf(1e-17, nu)),
                        math.log(stats.chi2.isf(1e-17, nu)), 240)
        w = np.exp(z)
        dens = stats.chi2.pdf(w, nu) * w
        weights = dens / dens.sum()
        res = np.zeros_like(x)
        for s, wt in zip(np.sqrt(w / nu), weights):
            res += wt * _bvn_cdf(x * s, y * s, r)
        return np.clip(res, 0.0, 1.0).reshape(u.shape)

    @staticmethod
    def logpdf(u, v, p):
        r, nu = p
        return _StudentT.logpdf_xy(_t_ppf(nu, u), _t_ppf(nu, v), r, nu)

    @staticmethod
    def logpdf_xy(x, y, r, nu):
        om = 1.0 - r * r
        lg = special.gammaln
        log2 = (lg((nu + 2) / 2) - lg(nu / 2) - math.log(nu * math.pi) - 0.5 * math.log(om)
                - (nu + 2) / 2 * np.log1p((x * x - 2 * r * x * y + y * y) / (nu * om)))
        c1 = lg((nu + 1) / 2) - lg(nu / 2) - 0.5 * math.log(nu * math.pi)
        log1 = 2 * c1 - (nu + 1) / 2 * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
        return log2 - log1

    @staticmethod
    def h(u, v, p):
        r, nu = p
        x, y = _t_ppf(nu, u), _t_ppf(nu, v)
        scale = np.sqrt((nu + y * y) * (1 - r * r) / (nu + 1))
        return special.stdtr(nu + 1, (x - r * y) / scale)

    @staticmethod
    def hinv(q, v, p):
        r, nu = p
        y = _t_ppf(nu, v)
        scale = np.sqrt((nu + y * y) * (1 - r * r) / (nu + 1))
        return special.stdtr(nu, _t_ppf(nu + 1, q) * scale + r * y)


def _clayton_logs(u, v, th):
    a = -th * np.log(u)
    b = -th * np.log(v)
    m = np.maximum(a, b)
    # log(u^-th + v^-th - 1)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


class _Clayton:
    @staticmethod
    def cdf(u, v, p):
        th = p[0]
        return np.exp(-_clayton_logs(u, v, th) / th)

    @staticmethod
    def logpdf(u, v, p):
        th = p[0]
        return (math.log1p(th) - (th + 1) * (np.log(u) + np.log(v))
                - (2 + 1 / th) * _clayton_logs(u, v, th))

    @staticmethod
    def h(u, v, p):
        th = p[0]
        return np.exp(-(th + 1) * np.log(v) - (1 / th + 1) * _clayton_logs(u, v, th))

    @staticmethod
    def hinv(q, v, p):
        th = p[0]
        t = np.log(np.expm1(-th / (th + 1) * np.log(q))) - th * np.log(v)
        return np.exp(-np.logaddexp(0.0, t) / th)


def _gumbel_parts(u, v, th):
    lx = np.log(-np.log(u))
    ly = np.log(-np.log(v))
    ls = np.logaddexp(th * lx, th * ly)
    a = np.exp(ls / th)
    return lx, ly, ls, a


class _Gumbel:
    @staticmethod
    def cdf(u, v, p):
        th = p[0]
        return np.exp(-_gumbel_parts(u, v, th)[3])

    @staticmethod
    def logpdf(u, v, p):
        th = p[0]
        lx, ly, ls, a = _gumbel_parts(u, v, th)
        return (-a - np.log(u) - np.log(v) + (th - 1) * (lx + ly) + (1 / th - 2) * ls
                + np.log(a + th - 1))

    @staticmethod
    def h(u, v, p):
        th = p[0]
        lx, ly, ls, a = _gumbel_parts(u, v, th)
        return np.exp(-a + (1 / th - 1) * ls + (th - 1) * ly - np.log(v))

    @staticmethod
    def hinv(q, v, p):
        q, v = np.broadcast_arrays(q, v)
        return _invert_increasing(lambda x: _Gumbel.h(x, v, p),
                                  lambda x: np.exp(_Gumbel.logpdf(x, v, p)), q)


class _Frank:
    @staticmethod
    def cdf(u, v, p):
        th = p[0]
        return -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / math.expm1(-th)) / th

    @staticmethod
    def logpdf(u, v, p):
        th = p[0]
        g = math.expm1(-th)
        den = g + np.expm1(-th * u) * np.expm1(-th * v)
        return math.log(-th * g) - th * (u + v) - 2 * np.log(np.abs(den))

    @staticmethod
    def h(u, v, p):
        th = p[0]
        a = np.expm1(-th * u)
        b = np.expm1(-th * v)
        return (b + 1) * a / (math.expm1(-th) + a * b)

    @staticmethod
    def hinv(q, v, p):
        th = p[0]
        b = np.expm1(-th * v)
        a = q * math.expm1(-th) / (1 + b * (1 - q))
        return -np.log1p(a) / th


_IMPL = {
    "Independence": _Independence,
    "Gaussian": _Gaussian,
    "StudentT": _StudentT,
    "Clayton": _Clayton,
    "Gumbel": _Gumbel,
    "Frank": _Frank,
}


def _invert_increasing(f, df, target, tol=1e-10, maxiter=100):
    """Solve ``f(x) = target`` on (0, 1) for increasing ``f``.

    Bisection keeps a bracket; a Newton step is taken whenever it stays inside.
    """
    target = np.asarray(target, dtype=float)
    lo = np.full(target.shape, EPS)
    hi = np.full(target.shape, 1.0 - EPS)
    x = np.full(target.shape, 0.5)
    for _ in range(maxiter):
        fx = f(x) - target
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx >= 0, x, hi)
        d = df(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / d
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        done = (np.abs(fx) < tol * 1e-2) | (hi - lo < 1e-15)
        x = np.where(done, x, xn)
        if np.all(done):
            break
    return x


# ---------------------------------------------------------------------------
# Public vectorised operations


def copula_cdf(c: PairCopula, u, v):
    """Copula distribution function ``C(u, v)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    uu, vv = _clip(u), _clip(v)
    base = _IMPL[c.family].cdf
    p = c.params
    r = c.rotation
    if r == 0:
        res = base(uu, vv, p)
    elif r == 90:
        res = vv - base(1 - uu, vv, p)
    elif r == 180:
        res = uu + vv - 1 + base(1 - uu, 1 - vv, p)
    else:
        res = uu - base(uu, 1 - vv, p)
    res = np.asarray(res, dtype=float)
    # exact boundary identities
    res = np.where(u <= 0, 0.0, res)
    res = np.where(v <= 0, 0.0, res)
    res = np.where(u >= 1, np.clip(v, 0, 1), res)
    res = np.where(v >= 1, np.clip(u, 0, 1), res)
    return _out(np.clip(res, 0.0, 1.0))


def copula_logpdf(c: PairCopula, u, v):
    """Logarithm of the copula density."""
    uu, vv = _clip(u), _clip(v)
    base = _IMPL[c.family].logpdf
    p = c.params
    r = c.rotation
    if r == 90:
        uu = 1 - uu
    elif r == 180:
        uu, vv = 1 - uu, 1 - vv
    elif r == 270:
        vv = 1 - vv
    return _out(base(uu, vv, p))


def copula_pdf(c: PairCopula, u, v):
    """Copula density ``c(u, v)``."""
    return _out(np.exp(copula_logpdf(c, u, v)))


def h_function(c: PairCopula, u, v, underlined: str = "first"):
    """Conditional distribution function of a copula.

    Parameters
    ----------
    c : PairCopula
    u, v : array_like
        Arguments of ``C(u, v)``.
    underlined : {"first", "second"}
        ``"first"`` returns ``dC/dv`` (cdf of ``u`` given ``v``);
        ``"second"`` returns ``dC/du`` (cdf of ``v`` given ``u``).
    """
    uu, vv = _clip(u), _clip(v)
    h0 = _IMPL[c.family].h
    p = c.params
    r = c.rotation
    if underlined == "first":
        if r == 0:
            res = h0(uu, vv, p)
        elif r == 90:
            res = 1 - h0(1 - uu, vv, p)
        elif r == 180:
            res = 1 - h0(1 - uu, 1 - vv, p)
        else:
            res = h0(uu, 1 - vv, p)
    elif underlined == "second":
        if r == 0:
            res = h0(vv, uu, p)
        elif r == 90:
            res = h0(vv, 1 - uu, p)
        elif r == 180:
            res = 1 - h0(1 - vv, 1 - uu, p)
        else:
            res = 1 - h0(1 - vv, uu, p)
    else:
        raise ValueError("underlined must be 'first' or 'second'")
    return _out(np.clip(res, 0.0, 1.0))


def h_inverse(c: PairCopula, q, cond, underlined: str = "first"):
    """Inverse of :func:`h_function` in its underlined argument.

    With ``underlined="first"`` this returns ``u`` such that
    ``h_function(c, u, cond, "first") == q``; with ``"second"`` it returns
    ``v`` such that ``h_function(c, cond, v, "second") == q``.
    """
    qq, ww = _clip(q), _clip(cond)
    inv = _IMPL[c.family].hinv
    p = c.params
    r = c.rotation
    if underlined == "first":
        if r == 0:
            res = inv(qq, ww, p)
        elif r == 90:
            res = 1 - inv(1 - qq, ww, p)
        elif r == 180:
            res = 1 - inv(1 - qq, 1 - ww, p)
        else:
            res = inv(qq, 1 - ww, p)
    elif underlined == "second":
        if r == 0:
            res = inv(qq, ww, p)
        elif r == 90:
            res = inv(qq, 1 - ww, p)
        elif r == 180:
            res = 1 - inv(1 - qq, 1 - ww, p)
        else:
            res = 1 - inv(1 - qq, ww, p)
    else:
        raise ValueError("underlined must be 'first' or 'second'")
    return _out(np.clip(res, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Dependence measures


def _debye1(x: float) -> float:
    if x == 0.0:
        return 1.0
    val, _ = integrate.quad(lambda t: t / math.expm1(t) if t != 0.0 else 1.0, 0.0, x,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return val / x


def _frank_tau(theta: float) -> float:
    if abs(theta) < 1e-6:
        return theta / 9.0
    return 1.0 - 4.0 / theta * (1.0 - _debye1(theta))


def _base_tau(family: str, params: tuple) -> float:
    if family == "Independence":
        return 0.0
    if family in ("Gaussian", "StudentT"):
        return 2.0 / math.pi * math.asin(params[0])
    if family == "Clayton":
        return params[0] / (params[0] + 2.0)
    if family == "Gumbel":
        return 1.0 - 1.0 / params[0]
    return _frank_tau(params[0])


def kendall_tau(c: PairCopula) -> float:
    """Population Kendall's tau of a copula."""
    t = _base_tau(c.family, c.params)
    return -t if c.rotation in (90, 270) else t


def tau_inverse(family: str, tau: float, nu: float | None = None) -> tuple:
    """Parameter vector of an unrotated family with Kendall's tau ``tau``.

    Parameters
    ----------
    family : str
    tau : float
        Target Kendall's tau.  Clayton and Gumbel only reach ``[0, 1)``.
    nu : float, optional
        Degrees of freedom for StudentT (default 5).

    Raises
    ------
    ParameterError
        If ``tau`` is unreachable by the family.
    """
    family = canonical_family(family)
    tau = float(tau)
    if not -1.0 < tau < 1.0:
        raise ParameterError(f"Kendall's tau must lie in (-1, 1), got {tau}")
    if family == "Independence":
        if tau != 0.0:
            raise ParameterError("Independence copula has tau = 0 only")
        return ()
    if family in ("Gaussian", "StudentT"):
        rho = math.sin(math.pi * tau / 2.0)
        return (rho,) if family == "Gaussian" else (rho, 5.0 if nu is None else float(nu))
    if family == "Clayton":
        if tau <= 0.0:
            raise ParameterError(f"unrotated Clayton needs tau > 0, got {tau}")
        return (2.0 * tau / (1.0 - tau),)
    if family == "Gumbel":
        if tau < 0.0:
            raise ParameterError(f"unrotated Gumbel needs tau >= 0, got {tau}")
        return (1.0 / (1.0 - tau),)
    # Frank
    if tau == 0.0:
        raise ParameterError("Frank copula with tau = 0 is the independence limit")
    a = abs(tau)
    if a > 0.995:
        raise ParameterError(f"|tau| too close to 1 for Frank: {tau}")
    lo, hi = 1e-8, 1.0
    while _frank_tau(hi) < a:
        hi *= 2.0
    th = optimize.brentq(lambda t: _frank_tau(t) - a, lo, hi, xtol=1e-13, rtol=1e-14)
    return (math.copysign(th, tau),)


def copula_from_tau(family: str, tau: float, nu: float | None = None) -> PairCopula:
    """Copula of ``family`` with Kendall's tau ``tau``.

    Negative tau for Clayton and Gumbel uses the 90 degree rotation and
    ``tau == 0`` yields the independence copula for the Archimedean families.
    """
    family = canonical_family(family)
    if family in ("Clayton", "Gumbel", "Frank") and tau == 0.0:
        return PairCopula("Independence")
    if family in ("Clayton", "Gumbel") and tau < 0.0:
        return PairCopula(family, tau_inverse(family, -tau), 90)
    return PairCopula(family, tau_inverse(family, tau, nu))


def tail_dependence(c: PairCopula) -> tuple[float, float]:
    """Lower and upper tail dependence coefficients ``(lambda_L, lambda_U)``."""
    f, p = c.family, c.params
    if f == "Clayton":
        lo, up = 2.0 ** (-1.0 / p[0]), 0.0
    elif f == "Gumbel":
        lo, up = 0.0, 2.0 - 2.0 ** (1.0 / p[0])
    elif f == "StudentT":
        r, nu = p
        lo = up = float(2.0 * special.stdtr(nu + 1, -math.sqrt((nu + 1) * (1 - r) / (1 + r))))
    else:
        lo = up = 0.0
    if c.rotation == 180:
        return up, lo
    if c.rotation in (90, 270):
        return 0.0, 0.0
    return lo, up


# ---------------------------------------------------------------------------
# Sampling


def sample(c: PairCopula, n: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Draw ``n`` pairs from the copula by conditional inversion.

    Returns
    -------
    ndarray of shape (n, 2)
    """
    rng = np.random.default_rng(rng)
    w = rng.random((n, 2))
    u = w[:, 0]
    v = h_inverse(c, w[:, 1], u, "second")
    return np.column_stack([u, v])


# ---------------------------------------------------------------------------
# Estimation


def _to_free(family: str, params: Sequence[float]) -> np.ndarray:
    if family in ("Gaussian", "StudentT"):
        out = [math.atanh(params[0])]
        if family == "StudentT":
            lo, hi = NU_BOUNDS
            nu = min(max(params[1], lo + 1e-9), hi - 1e-9)
            s = (nu - lo) / (hi - lo)
            out.append(math.log(s / (1 - s)))
        return np.array(out)
    if family == "Clayton":
        return np.array([math.log(params[0])])
    if family == "Gumbel":
        return np.array([math.log(max(params[0] - 1.0, 1e-12))])
    if family == "Frank":
        return np.array([params[0]])
    return np.array([])


def _from_free(family: str, z: Sequence[float]) -> tuple:
    if family in ("Gaussian", "StudentT"):
        rho = math.tanh(min(max(z[0], -5.0), 5.0))
        if family == "Gaussian":
            return (rho,)
        lo, hi = NU_BOUNDS
        s = special.expit(z[1])
        return (rho, lo + (hi - lo) * s)
    if family == "Clayton":
        return (math.exp(min(max(z[0], -12.0), math.log(80.0))),)
    if family == "Gumbel":
        return (1.0 + math.exp(min(max(z[0], -20.0), math.log(60.0))),)
    if family == "Frank":
        th = min(max(z[0], -120.0), 120.0)
        return (th if abs(th) > 1e-8 else 1e-8,)
    return ()


def to_free(c: PairCopula) -> np.ndarray:
    """Unconstrained parametrisation of a copula's parameters."""
    return _to_free(c.family, c.params)


def from_free(c: PairCopula, z) -> PairCopula:
    """Inverse of :func:`to_free`, keeping family and rotation of ``c``."""
    return PairCopula(c.family, _from_free(c.family, z), c.rotation)


def loglik(c: PairCopula, u, v) -> float:
    """Log-likelihood of a copula on pseudo-observations."""
    return float(np.sum(copula_logpdf(c, u, v)))


def _start_params(family: str, rotation: int, tau_hat: float, nu: float | None) -> tuple:
    t = -tau_hat if rotation in (90, 270) else tau_hat
    if family in ("Clayton", "Gumbel"):
        t = min(max(t, 0.05), 0.9)
    elif family == "Frank":
        t = min(max(t, -0.9), 0.9)
        if abs(t) < 0.02:
            t = 0.02 if t >= 0 else -0.02
    else:
        t = min(max(t, -0.9), 0.9)
    return tau_inverse(family, t, nu)


def fit_copula(family: str, u, v, rotation: int = 0, start: Sequence[float] | None = None,
               nu: float | None = None, tau_hat: float | None = None) -> PairCopula:
    """Maximum likelihood estimate of one copula family on pseudo-observations.

    Parameters
    ----------
    family : str
    u, v : array_like
        Pseudo-observations in (0, 1).
    rotation : int
    start : sequence of float, optional
        Starting parameter vector.  Defaults to inversion of Kendall's tau.
    nu : float, optional
        Starting degrees of freedom for StudentT.
    tau_hat : float, optional
        Precomputed empirical Kendall's tau.
    """
    family = canonical_family(family)
    u = _clip(u)
    v = _clip(v)
    if family == "Independence":
        return PairCopula("Independence")
    if start is None:
        if tau_hat is None:
            tau_hat = stats.kendalltau(u, v).statistic
            tau_hat = 0.0 if not np.isfinite(tau_hat) else float(tau_hat)
        start = _start_params(family, rotation, tau_hat, 5.0 if nu is None else nu)
    proto = PairCopula(family, tuple(start), rotation)
    impl = _IMPL[family].logpdf
    uu, vv = u, v
    if rotation == 90:
        uu = 1 - u
    elif rotation == 180:
        uu, vv = 1 - u, 1 - v
    elif rotation == 270:
        vv = 1 - v

    def nll(z):
        p = _from_free(family, np.atleast_1d(z))
        with np.errstate(all="ignore"):
            val = -np.sum(impl(uu, vv, p))
        return val if np.isfinite(val) else 1e300

    if family == "StudentT":
        return _fit_studentt(uu, vv, proto)
    z0 = to_free(proto)
    if len(z0) == 1:
        res = optimize.minimize_scalar(nll, bracket=(z0[0] - 0.3, z0[0] + 0.3),
                                       method="brent", tol=1e-8)
        z = np.array([res.x])
        if not nll(z) <= nll(z0):
            z = z0
    else:
        res = optimize.minimize(nll, z0, method="Nelder-Mead",
                                options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000})
        z = res.x if res.fun <= nll(z0) else z0
    return PairCopula(family, _from_free(family, z), rotation)


def _fit_studentt(uu, vv, proto: PairCopula) -> PairCopula:
    # profile likelihood: quantiles are computed once per trial nu, the
    # correlation is then a cheap inner one-dimensional search
    impl = _StudentT.logpdf_xy
    lo, hi = NU_BOUNDS

    def inner(nu):
        x, y = _t_ppf(nu, uu), _t_ppf(nu, vv)

        def nll_r(a):
            with np.errstate(all="ignore"):
                val = -np.sum(impl(x, y, math.tanh(a), nu))
            return val if np.isfinite(val) else 1e300

        a0 = math.atanh(proto.params[0])
        res = optimize.minimize_scalar(nll_r, bracket=(a0 - 0.1, a0 + 0.1), method="brent",
                                       tol=1e-8)
        a = min(max(res.x, -5.0), 5.0)
        return nll_r(a), a

    cache: dict = {}

    def prof(b):
        nu = lo + (hi - lo) * special.expit(b)
        if b not in cache:
            cache[b] = inner(nu)
        return cache[b][0]

    b0 = to_free(proto)[1]
    res = optimize.minimize_scalar(prof, bracket=(b0 - 0.5, b0 + 0.5), method="brent", tol=1e-6)
    b = float(np.clip(res.x, -30.0, 30.0))
    if b not in cache:
        prof(b)
    best_b = min(cache, key=lambda k: cache[k][0])
    nu = lo + (hi - lo) * special.expit(best_b)
    return PairCopula("StudentT", (math.tanh(cache[best_b][1]), nu), proto.rotation)


def _parse_candidate(cand) -> tuple[str, int | None]:
    if isinstance(cand, PairCopula):
        return cand.family, cand.rotation
    if isinstance(cand, (tuple, list)):
        return canonical_family(cand[0]), int(cand[1])
    s = str(cand)
    if ":" in s:
        f, r = s.split(":", 1)
        return canonical_family(f), int(r)
    return canonical_family(s), None


def information_criterion(ll: float, k: int, n: int, criterion: str = "aic") -> float:
    """AIC or BIC from a log-likelihood, number of parameters and sample size."""
    criterion = criterion.lower()
    if criterion == "aic":
        return 2.0 * k - 2.0 * ll
    if criterion == "bic":
        return math.log(n) * k - 2.0 * ll
    raise ValueError(f"unknown criterion {criterion!r}")


DEFAULT_CANDIDATES = ("Independence", "Gaussian", "StudentT", "Clayton", "Gumbel", "Frank")


def select_copula(u, v, candidates: Sequence = DEFAULT_CANDIDATES, criterion: str = "aic",
                  return_score: bool = False):
    """Fit every candidate family and keep the one with the smallest AIC/BIC.

    Candidates are family names, optionally suffixed with ``":rotation"``.  A
    bare Clayton or Gumbel is rotated by 90 degrees when the empirical
    Kendall's tau is negative.  Ties are broken by candidate order.
    """
    u = _clip(u)
    v = _clip(v)
    n = len(u)
    tau_hat = stats.kendalltau(u, v).statistic
    tau_hat = 0.0 if not np.isfinite(tau_hat) else float(tau_hat)
    best, best_score = None, math.inf
    for cand in candidates:
        fam, rot = _parse_candidate(cand)
        if rot is None:
            rot = 90 if (fam in ("Clayton", "Gumbel") and tau_hat < 0) else 0
        c = fit_copula(fam, u, v, rot, tau_hat=tau_hat)
        score = information_criterion(loglik(c, u, v), c.n_params, n, criterion)
        if not np.isfinite(score):
            continue
        if score < best_score - 1e-12:
            best, best_score = c, score
    if best is None:
        best, best_score = PairCopula("Independence"), 0.0
    return (best, best_score) if return_score else best
