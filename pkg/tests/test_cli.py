import json

import numpy as np
import pytest
from scipy import stats

from conftest import DIAMOND, SEVEN
from pcbn.benchmark import scenario_model
from pcbn.cli import main
from pcbn.graphs import ChainGraph, essential_graph, shd
from pcbn.io import Sample, read_sample_csv, write_sample_csv
from pcbn.model import PcbnModel, simulate

@pytest.fixture
def files(tmp_path):
    def make(name, obj):
        p = tmp_path / name
        p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
        return str(p)

    make.dir = tmp_path
    return make


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestSimulate:
    def test_gaussian(self, files, capsys):
        model = files("m.json", PcbnModel.from_taus(DIAMOND, "Gaussian", 0.25).to_dict())
        out = files.dir / "d.csv"
        assert _run(capsys, "simulate", "--model", model, "--n", 1000, "--seed", 1, "--out", out)[0] == 0
        s = read_sample_csv(out)
        assert s.values.shape == (1000, 4)
        assert abs(stats.kendalltau(s.column("1"), s.column("2")).statistic - 0.25) < 0.05

    def test_deterministic(self, files, capsys):
        model = files("m.json", PcbnModel.from_taus(DIAMOND, "Clayton", 0.5).to_dict())
        a, b = files.dir / "a.csv", files.dir / "b.csv"
        for p in (a, b):
            _run(capsys, "simulate", "--model", model, "--n", 50, "--seed", 3, "--out", p)
        assert a.read_bytes() == b.read_bytes()

    def test_zero_rows(self, files, capsys):
        model = files("m.json", PcbnModel.from_taus(DIAMOND, "Gaussian", 0.25).to_dict())
        code, _, err = _run(capsys, "simulate", "--model", model, "--n", 0)
        assert code == 2 and "--n" in err

    @pytest.mark.parametrize("content", ["{", json.dumps({"vertices": ["a"]})])
    def test_bad_model(self, files, capsys, content):
        code, _, err = _run(capsys, "simulate", "--model", files("m.json", content), "--n", 5)
        assert code == 2 and err.startswith("pcbn: error")


class TestFit:
    def test_report_and_model(self, files, capsys):
        s = simulate(PcbnModel.from_taus(DIAMOND, "Clayton", 0.5), 500, 0)
        data = files.dir / "d.csv"
        write_sample_csv(s, data)
        dag = files("dag.json", DIAMOND.to_json())
        out = files.dir / "fit.json"
        code, rep, _ = _run(capsys, "fit", "--data", data, "--dag", dag, "--out", out)
        assert code == 0
        lines = rep.splitlines()
        assert lines[0] == "edge\tfamily\trotation\tparams\ttau"
        assert [ln.split("\t")[0] for ln in lines[-4:]] == ["loglik", "params", "AIC", "BIC"]
        m = PcbnModel.from_dict(json.loads(out.read_text()))
        assert set(m.copulas) == set(DIAMOND.edges)

    def test_clayton_selection(self, files, capsys):
        dag = files("dag.json", DIAMOND.to_json())
        data = files.dir / "d.csv"
        hits = 0
        for r in range(100):
            write_sample_csv(simulate(scenario_model(1, 1), 1000, r), data)
            code, rep, _ = _run(capsys, "fit", "--data", data, "--dag", dag)
            assert code == 0
            hits += sum(ln.split("\t")[1] == "Clayton" for ln in rep.splitlines()[1:5]) >= 3
        assert hits >= 90

    def test_independence_zero_params(self, files, capsys):
        # a spurious family survives BIC with small probability, so count runs
        data = files.dir / "d.csv"
        dag = files("dag.json", DIAMOND.to_json())
        zero = 0
        for r in range(20):
            write_sample_csv(Sample(list("1234"), np.random.default_rng(100 + r).random((1000, 4))), data)
            code, rep, _ = _run(capsys, "fit", "--data", data, "--dag", dag, "--criterion", "bic")
            assert code == 0
            zero += "params\t0" in rep.splitlines()
        assert zero >= 16

    def test_free_family_beats_gaussian_on_t(self, files, capsys):
        m = PcbnModel.from_taus(DIAMOND, "StudentT", 0.5, nu=3.0)
        data = files.dir / "d.csv"
        write_sample_csv(simulate(m, 1000, 2), data)
        dag = files("dag.json", DIAMOND.to_json())
        aic = {}
        for cands in ("Gaussian", "Independence,Gaussian,StudentT,Clayton,Gumbel,Frank"):
            _, rep, _ = _run(capsys, "fit", "--data", data, "--dag", dag, "--candidates", cands)
            aic[cands] = float(rep.splitlines()[-2].split("\t")[1])
        assert aic["Independence,Gaussian,StudentT,Clayton,Gumbel,Frank"] < aic["Gaussian"]

    def test_joint(self, files, capsys):
        data = files.dir / "d.csv"
        write_sample_csv(simulate(PcbnModel.from_taus(DIAMOND, "Frank", 0.4), 300, 0), data)
        dag = files("dag.json", DIAMOND.to_json())
        _, seq, _ = _run(capsys, "fit", "--data", data, "--dag", dag, "--candidates", "Frank")
        code, joint, _ = _run(capsys, "fit", "--data", data, "--dag", dag, "--candidates", "Frank", "--joint")
        ll = lambda rep: float(rep.splitlines()[-4].split("\t")[1])
        assert code == 0 and ll(joint) >= ll(seq)

    def test_missing_column(self, files, capsys):
        data = files.dir / "d.csv"
        write_sample_csv(Sample(["1", "2"], np.full((5, 2), 0.5)), data)
        code, _, err = _run(capsys, "fit", "--data", data, "--dag", files("dag.json", DIAMOND.to_json()))
        assert code == 2 and "columns" in err

    def test_out_of_range_data(self, files, capsys):
        data = files("d.csv", "1,2,3,4\n0.5,0.5,1.5,0.5\n")
        code, _, _ = _run(capsys, "fit", "--data", data, "--dag", files("dag.json", DIAMOND.to_json()))
        assert code == 2


class TestPc:
    def test_gaussian(self, files, capsys):
        data = files.dir / "d.csv"
        write_sample_csv(simulate(scenario_model(3, 16), 1000, 0), data)
        log = files.dir / "log.csv"
        code, out, _ = _run(capsys, "pc", "--data", data, "--test", "COR", "--log", log)
        assert code == 0
        g = ChainGraph.from_dict(json.loads(out))
        assert 0 <= shd(g, essential_graph(DIAMOND)) <= 6
        assert log.read_text().startswith("i,j,K,p_value,decision,error")

    def test_independent(self, files, capsys):
        data = files.dir / "d.csv"
        write_sample_csv(Sample(list("abc"), np.random.default_rng(1).random((300, 3))), data)
        code, out, _ = _run(capsys, "pc", "--data", data, "--alpha", 0.001)
        assert code == 0 and ChainGraph.from_dict(json.loads(out)) == ChainGraph("abc")

    @pytest.mark.parametrize("args", [["--test", "X-H"], ["--alpha", "1.5"]])
    def test_usage(self, files, capsys, args):
        data = files("d.csv", "a,b\n0.1,0.2\n")
        assert _run(capsys, "pc", "--data", data, *args)[0] == 2


class TestDecompose:
    def test_seven_cdf(self, files, capsys):
        code, out, _ = _run(capsys, "decompose", "--dag", files("dag.json", SEVEN.to_json()), "cdf 3|5,6")
        assert code == 0
        assert out.strip() == "F3|56 = ∫ h6,3̲|54(F6|54,F3|54) · c64|5(F6|5,F4|5) · c54(F5,F4) · f4 dx4"

    def test_seven_pdf(self, files, capsys):
        dag = files("dag.json", SEVEN.to_json())
        assert _run(capsys, "decompose", "--dag", dag, "pdf {5,6}")[1].strip() == "f6 · c65(F6,F5) · f5"
        assert _run(capsys, "decompose", "--dag", dag, "pdf 5")[1].strip() == "f5"

    def test_latex(self, files, capsys):
        code, out, _ = _run(capsys, "decompose", "--dag", files("dag.json", SEVEN.to_json()), "--latex",
                            "pdf 5,6")
        assert code == 0 and "c_{65}" in out

    @pytest.mark.parametrize("target", ["pdf 9", "foo 1", "cdf 9|1"])
    def test_bad_target(self, files, capsys, target):
        assert _run(capsys, "decompose", "--dag", files("dag.json", SEVEN.to_json()), target)[0] == 2


class TestBenchmark:
    def test_smoke_and_determinism(self, files, capsys):
        cfg = files("s.json", {"scenarios": [3], "configs": [1], "n": 200, "runs": 3, "seed": 4,
                               "tests": ["COR"]})
        outs = []
        for k in range(2):
            d = files.dir / f"o{k}"
            code, out, _ = _run(capsys, "benchmark", "--scenario", cfg, "--out", d)
            assert code == 0
            outs.append(((d / "summary.csv").read_bytes(), (d / "runs.csv").read_bytes()))
        assert outs[0] == outs[1]

    def test_independence_model(self, files, capsys):
        cfg = files("s.json", {"scenarios": [3], "configs": [1], "n": 500, "runs": 1,
                               "independence": True, "alpha": 0.001})
        code, out, _ = _run(capsys, "benchmark", "--scenario", cfg, "--out", files.dir / "o")
        assert code == 0
        assert out.splitlines()[1].split(",")[-2:] == ["1", "0"]

    def test_bad_config(self, files, capsys):
        cfg = files("s.json", {"scenarios": [99]})
        assert _run(capsys, "benchmark", "--scenario", cfg, "--out", files.dir / "o")[0] == 2


def test_numeric_failure_exit_code(monkeypatch, files, capsys):
    from pcbn import cli
    from pcbn.exceptions import NumericalError

    def boom(*a, **k):
        raise NumericalError("integration failed")

    monkeypatch.setattr(cli, "simulate", boom)
    model = files("m.json", PcbnModel.from_taus(DIAMOND, "Gaussian", 0.25).to_dict())
    code, _, err = _run(capsys, "simulate", "--model", model, "--n", 5)
    assert code == 1 and "numerical failure" in err


def test_no_command(capsys):
    assert main([]) == 2
