"""Pair-copula Bayesian networks: copulas, factorization, vines, CI tests and PC."""
from .copula import PairCopula, copula_from_tau, h_function, h_inverse, kendall_tau, tail_dependence
from .graphs import ChainGraph, Dag, UGraph, d_separated, essential_graph, shd
from .model import PcbnModel, fit_pcbn, joint_fit, log_density, sequential_fit, simulate
from .pc import pc
from .vine import RVine, build_constrained_vine, fit_vine_sequential
from .citest import make_test, vine_ci_test
from .io import Sample, read_sample_csv, write_sample_csv

__all__ = [
    "PairCopula", "copula_from_tau", "h_function", "h_inverse", "kendall_tau", "tail_dependence",
    "ChainGraph", "Dag", "UGraph", "d_separated", "essential_graph", "shd",
    "PcbnModel", "fit_pcbn", "joint_fit", "log_density", "sequential_fit", "simulate",
    "pc", "RVine", "build_constrained_vine", "fit_vine_sequential", "make_test", "vine_ci_test",
    "Sample", "read_sample_csv", "write_sample_csv",
]
