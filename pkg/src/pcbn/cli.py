"""Command line interface.

Subcommands::

    pcbn simulate  --model M.json --n N --seed S --out data.csv
    pcbn fit       --data data.csv --dag D.json [--joint] --out model.json
    pcbn pc        --data data.csv --alpha A --test R-H --out cg.json [--log tests.csv]
    pcbn decompose --dag D.json "pdf 5,6" | "cdf 3|5,6"
    pcbn benchmark --scenario S.json --out DIR

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmark import ScenarioConfig, run_benchmark, summarize, to_csv, workers_from_env
from .citest import TEST_NAMES
from .copula import DEFAULT_CANDIDATES, kendall_tau
from .exceptions import (ConfigurationError, InputFormatError, NumericalError, ParameterError,
                         StructureError, TestError)
from .factorize import factorizer
from .graphs import Dag
from .io import format_sample_csv, read_json, read_sample_csv
from .model import PcbnModel, fit_pcbn, joint_fit, loglik, simulate
from .pc import pc

USAGE_ERRORS = (InputFormatError, StructureError, ConfigurationError, ParameterError,
                FileNotFoundError, IsADirectoryError, KeyError)
NUMERIC_ERRORS = (NumericalError, TestError, ArithmeticError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


def _g4(x: float) -> str:
    return format(float(x), ".4g")


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_dag(path) -> Dag:
    return Dag.from_dict(read_json(path))


# --------------------------------------------------------------------------- #

def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be a positive integer")
    model = PcbnModel.from_dict(read_json(args.model))
    sample = simulate(model, args.n, np.random.default_rng(args.seed))
    _write(format_sample_csv(sample), args.out)
    return 0


def fit_report(model: PcbnModel, data) -> str:
    """Per-edge table with estimates, implied tau and the information criteria."""
    lines = ["edge\tfamily\trotation\tparams\ttau"]
    for w, v in model.edge_sequence:
        c = model.copulas[(w, v)]
        given = model.dag.parents_before(v, w)
        label = f"{w}{v}" + (f"|{''.join(given)}" if given else "")
        params = ",".join(_g4(p) for p in c.params) or "-"
        lines.append(f"{label}\t{c.family}\t{c.rotation}\t{params}\t{_g4(kendall_tau(c))}")
    ll = loglik(model, data)
    k = int(sum(c.n_params for c in model.copulas.values()))
    n = len(next(iter(data.as_dict().values())))
    lines.append(f"loglik\t{_g4(ll)}")
    lines.append(f"params\t{k}")
    lines.append(f"AIC\t{_g4(-2 * ll + 2 * k)}")
    lines.append(f"BIC\t{_g4(-2 * ll + np.log(n) * k)}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    data = read_sample_csv(args.data)
    dag = _load_dag(args.dag)
    missing = set(dag.vertices) - set(data.columns)
    if missing:
        raise UsageError(f"data lacks columns for vertices {sorted(missing)}")
    cands = tuple(args.candidates.split(",")) if args.candidates else DEFAULT_CANDIDATES
    weight = None if args.keep_orderings else args.ordering_weight
    model = fit_pcbn(dag, data, cands, args.criterion, weight)
    if args.joint:
        model = joint_fit(model, data)
    if args.out:
        Path(args.out).write_text(json.dumps(model.to_dict(), indent=2) + "\n")
    report = fit_report(model, data)
    _write(report, args.report)
    return 0


def cmd_pc(args) -> int:
    data = read_sample_csv(args.data)
    res = pc(data, args.alpha, args.test, max_k=args.max_k, seed=args.seed)
    out = res.graph.to_dict()
    out["conflicts"] = [list(c) for c in res.conflicts]
    out["extendable"] = res.extendable
    _write(json.dumps(out, indent=2) + "\n", args.out)
    if args.log:
        Path(args.log).write_text(res.log_csv())
    return 0


def _parse_target(text: str) -> tuple:
    kind, _, rest = text.strip().partition(" ")
    rest = rest.strip()
    if kind == "pdf":
        return "pdf", tuple(x for x in rest.replace("{", "").replace("}", "").split(",") if x.strip())
    if kind == "cdf":
        v, _, given = rest.partition("|")
        given = given.replace("{", "").replace("}", "")
        return "cdf", (v.strip(), tuple(x.strip() for x in given.split(",") if x.strip()))
    raise UsageError(f"target must look like 'pdf 5,6' or 'cdf 3|5,6', got {text!r}")


def cmd_decompose(args) -> int:
    dag = _load_dag(args.dag)
    fz = factorizer(dag)
    kind, spec = _parse_target(args.target)
    style = "latex" if args.latex else "plain"
    if kind == "pdf":
        verts = [v.strip() for v in spec]
        unknown = set(verts) - set(dag.vertices)
        if unknown or not verts:
            raise UsageError(f"unknown vertices {sorted(unknown)}")
        _write(fz.marginal_pdf(verts).text(style) + "\n", None)
        return 0
    v, given = spec
    if v not in dag.vertices or set(given) - set(dag.vertices):
        raise UsageError("unknown vertex in target")
    expr = fz.conditional_cdf(v, given)
    lines = [f"{expr.key.text(style)} = {expr.text(style)}"]
    if args.resolve:
        for key, sub in fz.resolve(expr).items():
            if sub.numerator is None or sub.key == expr.key:
                continue
            lines.append(f"{key.text(style)} = {sub.text(style)}")
    _write("\n".join(lines) + "\n", None)
    return 0


def cmd_benchmark(args) -> int:
    cfg = ScenarioConfig.from_dict(read_json(args.scenario))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if args.test:
        cfg.tests = args.test.split(",")
    cfg = ScenarioConfig.from_dict(cfg.to_dict())
    workers = args.workers or workers_from_env()
    rows = run_benchmark(cfg, workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(to_csv(rows))
    (out / "summary_by_config.csv").write_text(to_csv(summarize(rows, ("f", "p", "test"))))
    summary = summarize(rows, ("f", "test"))
    (out / "summary.csv").write_text(to_csv(summary))
    sys.stdout.write(to_csv(summary))
    return 0


# --------------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcbn", description="Pair-copula Bayesian networks")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a sample from a model file")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="select and estimate a PCBN for a DAG")
    f.add_argument("--data", required=True)
    f.add_argument("--dag", required=True)
    f.add_argument("--candidates", help="comma separated families, e.g. Gaussian,Clayton:180")
    f.add_argument("--criterion", choices=("aic", "bic"), default="aic")
    f.add_argument("--ordering-weight", choices=("abs-kendall", "aic", "bic"), default="abs-kendall")
    f.add_argument("--keep-orderings", action="store_true", help="use the orderings of the DAG file")
    f.add_argument("--joint", action="store_true", help="refine by joint maximum likelihood")
    f.add_argument("--out", help="model JSON output")
    f.add_argument("--report", help="report output (default stdout)")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("pc", help="learn an essential graph with the PC algorithm")
    c.add_argument("--data", required=True)
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--test", choices=TEST_NAMES, default="COR")
    c.add_argument("--max-k", type=int)
    c.add_argument("--seed", type=int, default=0, help="seed of the permutation tests")
    c.add_argument("--out")
    c.add_argument("--log", help="CSV file for the test log")
    c.set_defaults(func=cmd_pc)

    d = sub.add_parser("decompose", help="print a pair-copula decomposition")
    d.add_argument("--dag", required=True)
    d.add_argument("target", help="'pdf 5,6' or 'cdf 3|5,6'")
    d.add_argument("--latex", action="store_true")
    d.add_argument("--resolve", action="store_true", help="also expand nested conditional cdfs")
    d.set_defaults(func=cmd_decompose)

    b = sub.add_parser("benchmark", help="run the structure-learning simulation study")
    b.add_argument("--scenario", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--alpha", type=float)
    b.add_argument("--test", help="comma separated test names")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "alpha", None) is not None and not 0 < args.alpha < 1:
        print("pcbn: error: --alpha must lie in (0, 1)", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"pcbn: error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"pcbn: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
