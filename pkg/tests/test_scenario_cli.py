import filecmp
import os

import pytest

from gasnetopt import cli
from gasnetopt.errors import NoConvergence, ParseError, SchemaError, StateRejected
from gasnetopt.network import NetworkState
from gasnetopt.results import emit_results, run_batch, run_optimize, validate_state
from gasnetopt.scenario import emit_scenario, parse_scenario, scenario_network

from helpers import fixture_text, random_scenario


def ramp_scenario(j, demand, mode="flow"):
    return parse_scenario(f"""[scenario]
name = ramp{j:02d}
root = s
root_pressure = 60.0
mode = {mode}

[nodes]
id\tintensity\tp_min\tp_max
s\t{-demand!r}\t0\t80
d\t{demand!r}\t20\t80

[junctions]
id
m

[sections]
id\tfrom\tto\tlengths\tk
a\ts\tm\t40.0\t0.004
b\tm\td\t30.0\t0.005
c\ts\td\t90.0\t0.006
""")


# -- parsing ------------------------------------------------------------------------------------------
def test_fixture_row_counts(ring_scn):
    assert len(ring_scn.rows("nodes")) == 38
    assert len(ring_scn.rows("sections")) == 30
    assert len(ring_scn.rows("stations")) == 13


def test_fixture_round_trip(ring_scn):
    text = emit_scenario(ring_scn)
    assert parse_scenario(text) == ring_scn
    assert emit_scenario(parse_scenario(text)) == text


@pytest.mark.parametrize("seed", range(50))
def test_random_round_trip(seed):
    scn = random_scenario(seed)
    once = parse_scenario(emit_scenario(scn))
    assert parse_scenario(emit_scenario(once)) == once
    for name, rows in scn.tables.items():
        assert len(once.rows(name)) == len(rows)


def test_unknown_key_position():
    with pytest.raises(ParseError) as ei:
        parse_scenario("[scenario]\nname = x\n  bogus = 1\n")
    assert (ei.value.line, ei.value.column) == (3, 3)


def test_unknown_column_position():
    with pytest.raises(ParseError) as ei:
        parse_scenario("[nodes]\nid\tintensity\tcolour\n")
    assert (ei.value.line, ei.value.column) == (2, 14)


def test_short_row_and_bad_float():
    with pytest.raises(ParseError) as ei:
        parse_scenario("[nodes]\nid\tintensity\na\n")
    assert ei.value.line == 3
    with pytest.raises(ParseError):
        parse_scenario("[nodes]\nid\tintensity\na\tnan\n")


def test_empty_network_is_schema_error():
    with pytest.raises(SchemaError):
        scenario_network(parse_scenario("[scenario]\nname = empty\nroot = a\n"))


def test_undeclared_node_is_schema_error():
    with pytest.raises(SchemaError):
        scenario_network(parse_scenario("[scenario]\nroot = a\n[nodes]\nid\na\n[links]\nid\tfrom\tto\nl\ta\tzz\n"))


# -- results ----------------------------------------------------------------------------------------------
def test_validation_gate():
    net = scenario_network(ramp_scenario(0, 5.0))
    flows = {"a": 2.0, "b": 2.0, "c": 3.0}
    ok = NetworkState({n: 50.0 for n in net.nodes}, {"s": -5.0, "m": 0.0, "d": 5.0}, flows)
    validate_state(net, ok)
    with pytest.raises(StateRejected):
        validate_state(net, NetworkState(ok.pressures, ok.intensities, dict(flows, c=3.0 + 1e-6)))
    with pytest.raises(StateRejected):
        validate_state(net, NetworkState(dict(ok.pressures, d=19.0), ok.intensities, flows))


def test_identical_seeds_byte_identical(ring_scn, tmp_path):
    for d in ("a", "b"):
        emit_results(run_optimize(ring_scn, "penalty", 7), tmp_path / d)
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b")) and names
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []


def test_identical_scenarios_identical_bundles(ring_scn):
    a, b, _ = run_batch([ring_scn, ring_scn])
    assert a.files() == b.files()


def test_demand_ramp_cost_monotone():
    scns = [ramp_scenario(j, 2.0 + 0.5 * j) for j in range(50)]
    bundles = run_batch(scns)
    costs = [b.summary["objective"] for b in bundles[:-1]]
    assert all(b.status == "optimal" for b in bundles[:-1])
    assert all(x <= y for x, y in zip(costs, costs[1:]))
    assert bundles[-1].summary["worst_exit"] == 0


def test_mixed_mode_batch():
    scns = [ramp_scenario(0, 5.0, mode="hydraulic")] + [ramp_scenario(j, 5.0) for j in range(1, 50)]
    bundles = run_batch(scns)
    modes = [r[2] for r in bundles[-1].table("runs").rows]
    assert modes == ["solve"] + ["flow"] * 49


# -- command line --------------------------------------------------------------------------------------
@pytest.fixture
def fixture_file(tmp_path):
    p = tmp_path / "central_ring.scn"
    p.write_text(fixture_text())
    return p


def test_cli_solve_ok(fixture_file, tmp_path, capsys):
    assert cli.main(["solve", str(fixture_file), "--out", str(tmp_path / "out")]) == 0
    files = os.listdir(tmp_path / "out")
    assert "central_ring.solve.summary.tsv" in files and "central_ring.solve.nodes.tsv" in files
    assert "\033[" not in capsys.readouterr().out


def test_cli_optimize_methods(fixture_file):
    for m in ("bnb", "penalty", "staged"):
        assert cli.main(["optimize", str(fixture_file), "--method", m, "--seed", "1"]) == 0


def test_cli_infeasible_exit(tmp_path):
    p = tmp_path / "tight.scn"
    p.write_text(emit_scenario(ramp_scenario(0, 5.0))
                 .replace("id\tfrom\tto\tlengths\tk\n", "id\tfrom\tto\tlengths\tk\tq_max\n")
                 .replace("0.004\n", "0.004\t1.0\n").replace("0.005\n", "0.005\t1.0\n")
                 .replace("0.006\n", "0.006\t1.0\n"))
    assert cli.main(["flow", str(p)]) == 2


def test_cli_contract_rejection(fixture_file, tmp_path):
    p = tmp_path / "raised.scn"
    p.write_text(fixture_text().replace("46.07", "90"))
    assert cli.main(["contract", "check", str(p)]) == 2


def test_cli_parse_error_exit(tmp_path, capsys):
    p = tmp_path / "bad.scn"
    p.write_text("[scenario]\nname = x\nbogus = 1\n")
    assert cli.main(["solve", str(p)]) == 3
    assert "line 3" in capsys.readouterr().err


def test_cli_usage_and_missing_file(tmp_path):
    with pytest.raises(SystemExit) as ei:
        cli.main(["solve"])
    assert ei.value.code == 3
    assert cli.main(["solve", str(tmp_path / "missing.scn")]) == 3


def test_cli_internal_failure_exit(fixture_file, monkeypatch):
    def boom(*a, **k):
        raise NoConvergence("closure error stays at 1 bar")
    monkeypatch.setattr(cli, "run_solve", boom)
    assert cli.main(["solve", str(fixture_file)]) == 4


def test_colour_respects_no_color(monkeypatch):
    class Tty:
        def isatty(self):
            return True
    monkeypatch.delenv("NO_COLOR", raising=False)
    assert cli._colour("x", "31", Tty()) != "x"
    monkeypatch.setenv("NO_COLOR", "1")
    assert cli._colour("x", "31", Tty()) == "x"


def test_cli_track_and_invoice(fixture_file, tmp_path):
    assert cli.main(["track", str(fixture_file), "--out", str(tmp_path)]) == 0
    assert cli.main(["contract", "invoice", str(fixture_file), "--out", str(tmp_path)]) == 0
    assert any(f.endswith(".tracking.tsv") for f in os.listdir(tmp_path))


def test_cli_batch(fixture_file, tmp_path):
    assert cli.main(["batch", str(fixture_file), str(fixture_file), "--out", str(tmp_path)]) == 0
    assert os.path.exists(tmp_path / "batch.batch.runs.tsv")
