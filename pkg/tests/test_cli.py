import json

import pytest

from mixsim.cli import main, render

TOPOLOGIES = {
    "mp5": {"n": 5, "model": "pure-mp"},
    "cluster": {"n": 5, "model": "cluster", "clusters": [[0, 1, 2], [3, 4]]},
    "star": {"n": 5, "model": "uniform-mm", "edges": [[0, 1], [0, 2], [0, 3], [0, 4]]},
    "singletons": {"n": 3, "model": "cluster", "clusters": [[0], [1], [2]]},
}


@pytest.fixture
def topo(tmp_path):
    def make(name):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(TOPOLOGIES[name]))
        return str(path)
    return make


def report(tmp_path, argv):
    out = tmp_path / "report.json"
    code = main(argv + ["--json", str(out)])
    return code, json.loads(out.read_text())


def test_analyze(topo, tmp_path, capsys):
    code, rep = report(tmp_path, ["analyze", "--topology", topo("mp5")])
    assert code == 0
    assert (rep["f_opt"], rep["f_maj"], rep["rho"], rep["sigma"]) == (2, 2, 5, 5)
    assert "f_opt: 2" in capsys.readouterr().out
    _, rep = report(tmp_path, ["analyze", "--topology", topo("cluster")])
    assert rep["f_opt"] == rep["f_maj"]
    _, rep = report(tmp_path, ["analyze", "--topology", topo("star")])
    assert rep["model_params"]["f_G"] == 4 and rep["model_params"]["f_mm"] < 4


def test_schema_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 3, "model": "uniform-mm", "edges": [[0, 7]]}))
    assert main(["analyze", "--topology", str(bad)]) == 2
    assert "$.edges" in capsys.readouterr().err
    assert main(["analyze", "--topology", str(tmp_path / "missing.json")]) == 2


def test_sim_register(topo, tmp_path):
    code, rep = report(tmp_path, ["sim-register", "--topology", topo("cluster"), "--runs", "3", "--seed", "1"])
    assert code == 0 and rep["ok"] and len(rep["results"]) == 3
    assert main(["sim-register", "--topology", topo("mp5"), "--f", "3"]) == 2


def test_sim_register_unsafe_can_be_forced(topo):
    assert main(["sim-register", "--topology", topo("mp5"), "--f", "3", "--allow-unsafe",
                 "--crashes", "0", "--adversary", "round-robin"]) in (0, 1)


def test_partition_demo(topo, tmp_path):
    code, rep = report(tmp_path, ["partition-demo", "--topology", topo("mp5"), "--f", "3"])
    assert code == 0 and rep["violation_exhibited"]
    assert rep["read"]["result"] == [0, 0]
    assert main(["partition-demo", "--topology", topo("mp5"), "--f", "2"]) == 2
    code, rep = report(tmp_path, ["partition-demo", "--topology", topo("cluster"), "--f", "3"])
    assert code == 0 and rep["violation_exhibited"]


def test_coin_and_bad_c(tmp_path):
    code, rep = report(tmp_path, ["coin", "--runs", "10", "--seed", "2", "--c", "3/2"])
    assert rep["agreement_parameter"] == "1/6"
    assert rep["unterminated"] == 0 and code == 0
    assert main(["coin", "--c", "1"]) == 2
    assert main(["coin", "--c", "0.5"]) == 2


def test_consensus(tmp_path):
    code, rep = report(tmp_path, ["consensus", "--runs", "5", "--seed", "3"])
    assert code == 0 and rep["ok"]
    for row in rep["results"]:
        assert len(set(row["decisions"])) == 1


def test_cluster_compare(topo, tmp_path):
    code, rep = report(tmp_path, ["cluster-compare", "--topology", topo("cluster"), "--f", "2"])
    assert code == 0
    assert rep["represented"]["min_acks"] < rep["count"]["min_acks"] == 3
    code, rep = report(tmp_path, ["cluster-compare", "--topology", topo("singletons"), "--f", "1"])
    assert rep["represented"]["acks_awaited"] == rep["count"]["acks_awaited"]
    assert main(["cluster-compare", "--topology", topo("mp5")]) == 2


def test_json_reports_are_stable(topo, tmp_path):
    first = report(tmp_path, ["sim-register", "--topology", topo("mp5"), "--seed", "9"])[1]
    second = report(tmp_path, ["sim-register", "--topology", topo("mp5"), "--seed", "9"])[1]
    assert first == second


def test_seed_required_in_ci(topo, monkeypatch):
    monkeypatch.setenv("CI", "1")
    assert main(["sim-register", "--topology", topo("mp5")]) == 2
    assert main(["sim-register", "--topology", topo("mp5"), "--seed", "0"]) == 0


def test_render_is_derived_from_report():
    text = render({"a": 1, "b": {"c": [1, 2]}, "rows": [{"x": 1, "y": "z"}], "empty": {}})
    assert text.splitlines() == ["a: 1", "b:", "  c: [1, 2]", "rows: (1)", '  - x=1, y="z"', "empty: {}"]
