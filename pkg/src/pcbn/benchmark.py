"""Structure-learning simulation study on the four-vertex example DAG.

Data are simulated from PCBNs on ``1 -> 2, 1 -> 3, 2 -> 4, 3 -> 4`` with
parent ordering ``2 <_4 3``.  The pair copulas ``C12, C13, C24, C34|2``
follow one of 28 family choices and one of 16 Kendall's tau
configurations.  Each run applies the PC algorithm with every requested
test and compares the result with the true essential graph.
"""
from __future__ import annotations

import csv
import io as _io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .citest import TEST_NAMES
from .exceptions import ConfigurationError, PcbnError
from .graphs import Dag, essential_graph, shd
from .model import PcbnModel, simulate
from .pc import pc

DIAMOND_DAG = Dag("1234", [("1", "2"), ("1", "3"), ("2", "4"), ("3", "4")], {"4": ["2", "3"]})
DIAMOND_EDGES = (("1", "2"), ("1", "3"), ("2", "4"), ("3", "4"))

FAMILY_CODES = {"C": "Clayton", "G": "Gumbel", "N": "Gaussian", "t": "StudentT"}

# families of C12, C13, C24, C34|2
COPULA_SCENARIOS = dict(enumerate([
    "CCCC", "GGGG", "NNNN", "tttt", "CGNt", "CGtN", "CNGt", "CNtG", "CtGN", "CtNG",
    "GCNt", "GCtN", "GNCt", "GNtC", "GtCN", "GtNC", "NCGt", "NCtG", "NGCt", "NGtC",
    "NtCG", "NtGC", "tCGN", "tCNG", "tGCN", "tGNC", "tNCG", "tNGC"], start=1))

_L, _H = 0.25, 0.75
TAU_CONFIGS = dict(enumerate([
    (_L, _L, _L, _L), (_H, _L, _L, _L), (_L, _H, _L, _L), (_L, _L, _H, _L),
    (_L, _L, _L, _H), (_H, _H, _L, _L), (_H, _L, _H, _L), (_H, _L, _L, _H),
    (_L, _H, _H, _L), (_L, _H, _L, _H), (_L, _L, _H, _H), (_H, _H, _H, _L),
    (_H, _H, _L, _H), (_H, _L, _H, _H), (_L, _H, _H, _H), (_H, _H, _H, _H)], start=1))

WORKERS_ENV = "PCBN_WORKERS"


@dataclass
class ScenarioConfig:
    """Benchmark settings.

    Parameters
    ----------
    scenarios : list of int
        Copula scenarios ``f`` in 1..28.
    configs : list of int
        Kendall's tau configurations ``p`` in 1..16.
    n : int
        Observations per run.
    runs : int
        Runs per ``(f, p)``.
    seed : int
        Master seed.
    alpha : float
    tests : list of str
    nu : float
        Degrees of freedom of every Student t copula.
    """

    scenarios: list = field(default_factory=lambda: [3])
    configs: list = field(default_factory=lambda: [1])
    n: int = 1000
    runs: int = 100
    seed: int = 0
    alpha: float = 0.05
    tests: list = field(default_factory=lambda: ["COR"])
    nu: float = 5.0
    independence: bool = False

    def __post_init__(self):
        self.scenarios = [int(f) for f in self.scenarios]
        self.configs = [int(p) for p in self.configs]
        self.tests = [str(t) for t in self.tests]
        bad = [f for f in self.scenarios if f not in COPULA_SCENARIOS]
        if bad:
            raise ConfigurationError(f"unknown copula scenarios {bad}")
        bad = [p for p in self.configs if p not in TAU_CONFIGS]
        if bad:
            raise ConfigurationError(f"unknown tau configurations {bad}")
        bad = [t for t in self.tests if t not in TEST_NAMES]
        if bad:
            raise ConfigurationError(f"unknown tests {bad}")
        if self.n < 50 or self.runs < 1:
            raise ConfigurationError("need n >= 50 and runs >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown scenario fields {sorted(unknown)}")
        return cls(**known)


def scenario_model(f: int, p: int, nu: float = 5.0, independence: bool = False) -> PcbnModel:
    """PCBN for copula scenario ``f`` and tau configuration ``p``."""
    if independence:
        return PcbnModel.from_taus(DIAMOND_DAG, "Independence", 0.0)
    fams = {e: FAMILY_CODES[c] for e, c in zip(DIAMOND_EDGES, COPULA_SCENARIOS[f])}
    taus = dict(zip(DIAMOND_EDGES, TAU_CONFIGS[p]))
    return PcbnModel.from_taus(DIAMOND_DAG, fams, taus, nu)


def run_rng(seed: int, f: int, p: int, r: int) -> np.random.Generator:
    """Independent stream for one run, keyed by the run coordinates."""
    return np.random.default_rng(np.random.SeedSequence([seed, f, p, r]))


def truth(cfg: ScenarioConfig):
    """Target essential graph; edgeless for the independence model."""
    return essential_graph(Dag("1234", []) if cfg.independence else DIAMOND_DAG)


def _one_run(args) -> list:
    cfg, f, p, r = args
    model = scenario_model(f, p, cfg.nu, cfg.independence)
    target = truth(cfg)
    sample = simulate(model, cfg.n, run_rng(cfg.seed, f, p, r))
    rows = []
    for t in cfg.tests:
        try:
            g = pc(sample, cfg.alpha, t).graph
            rows.append({"f": f, "p": p, "run": r, "test": t, "pi": int(g == target),
                         "shd": shd(g, target), "error": ""})
        except (PcbnError, ValueError, ArithmeticError) as exc:
            rows.append({"f": f, "p": p, "run": r, "test": t, "pi": "", "shd": "",
                         "error": f"{type(exc).__name__}: {exc}"})
    return rows


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw)) if raw else default
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_benchmark(cfg: ScenarioConfig, workers: int | None = None) -> list:
    """Per-run records in ``(f, p, run, test)`` order."""
    workers = workers_from_env() if workers is None else workers
    jobs = [(cfg, f, p, r) for f in cfg.scenarios for p in cfg.configs for r in range(cfg.runs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            chunks = list(ex.map(_one_run, jobs, chunksize=1))
    else:
        chunks = [_one_run(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]


def summarize(rows: Sequence[dict], by: Sequence[str] = ("f", "test")) -> list:
    """Mean recovery indicator and mean SHD per group; failed runs are counted separately."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in by), []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: tuple((str(type(x)), x) for x in k)):
        ok = [r for r in groups[key] if r["error"] == ""]
        pi = float(np.mean([r["pi"] for r in ok])) if ok else float("nan")
        dl = float(np.mean([r["shd"] for r in ok])) if ok else float("nan")
        out.append({**dict(zip(by, key)), "runs": len(ok), "failed": len(groups[key]) - len(ok),
                    "pi": pi, "shd": dl})
    return out


def fmt4(x) -> str:
    return format(x, ".4g") if isinstance(x, float) else str(x)


def to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: fmt4(v) for k, v in row.items()})
    return buf.getvalue()
