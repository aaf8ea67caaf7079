import csv
import json
import math
import subprocess
import sys

import pytest

from ricci.errors import ConfigError, UnknownScenarioError
from ricci.runner import cli, report as rp, scenarios as sc
from ricci.runner.config import load_config, parse_value


def test_parse_value():
    assert parse_value("0.25") == 0.25
    assert parse_value("[0.1, 0.2]") == [0.1, 0.2]
    assert parse_value("0.1,0.2") == [0.1, 0.2]
    assert parse_value("box") == "box"


def test_config_layers(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"seed": 3, "quadrature": {"rel_tol": 1e-5}}))
    cfg = load_config(f, [("quadrature.order", "7"), ("alpha", "0.25")])
    assert cfg["seed"] == 3
    assert cfg["quadrature"]["rel_tol"] == 1e-5
    assert cfg["quadrature"]["order"] == 7
    assert cfg["quadrature"]["abs_tol"] == 1e-10
    assert cfg["params"] == {"alpha": 0.25}


@pytest.mark.parametrize("override,key", [
    (("quadrature.rel_tol", "-1"), "quadrature.rel_tol"),
    (("quadrature.order", "1.5"), "quadrature.order"),
    (("quadrature.bogus", "1"), "quadrature.bogus"),
    (("flow.times", "[-0.1]"), "flow.times"),
    (("seed", "true"), "seed"),
])
def test_config_errors_name_the_key(override, key):
    with pytest.raises(ConfigError) as exc:
        load_config(None, [override])
    assert exc.value.key_path == key


def test_bad_config_file(tmp_path):
    f = tmp_path / "c.json"
    f.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(f)


def test_list_content():
    rows = {r["name"]: r for r in sc.list_scenarios()}
    for name in ("flat-2d", "cone", "cone-3d", "edge", "glued-cones", "cone-family", "sphere-flow",
                 "static-cone-flow"):
        assert name in rows
    assert rows["cone"]["anchor"] == "cone-vertex-atom"
    assert rows["cone"]["params"] == {"alpha": 0.5}
    assert [r["name"] for r in sc.list_scenarios("cone")][:1] == ["cone"]
    assert sc.list_scenarios("no-such-thing") == []


def test_unknown_scenario():
    with pytest.raises(UnknownScenarioError):
        sc.get_scenario("torus")


def test_unknown_param_is_rejected():
    with pytest.raises(ConfigError):
        cli.run_scenario("cone", load_config(None, [("beta", "1")]))


def test_unknown_check_is_rejected():
    with pytest.raises(ConfigError):
        cli.run_scenario("flat-2d", load_config(), checks=["nope"])


def test_flat_run_and_determinism(tmp_path):
    a, recs = cli.run_scenario("flat-2d", load_config(), threads=1)
    b, _ = cli.run_scenario("flat-2d", load_config(), threads=2)
    assert a["all_pass"]
    assert set(a["checks"]) == set(sc.CATALOG["flat-2d"].check_names())
    assert rp.dumps(rp.without_timing(a)) == rp.dumps(rp.without_timing(b))
    assert set(a["timing"]) == {"wall_clock_s", "timestamp"}
    for c in a["checks"].values():
        assert set(c) == {"computed", "oracle", "tolerance", "pass", "provenance", "details"}


def test_report_files(tmp_path):
    rep, recs = cli.run_scenario("static-cone-flow", load_config(), checks=["flow-tame"], threads=1)
    rp.write_report(tmp_path, rep, recs)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["checks"]["flow-tame"]["pass"]
    with open(tmp_path / "trace_flow-tame.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "value", "error"]
    assert len(rows) == 5
    assert float(rows[2][1]) == pytest.approx(-4 * math.pi * 0.5 * 0.1, rel=0.02)


def test_jsonable():
    out = rp.jsonable({"a": math.inf, "b": -math.inf, "c": math.nan, "d": 1 + 2j, 3: (1, 2)})
    assert out == {"a": "inf", "b": "-inf", "c": "nan", "d": {"re": 1.0, "im": 2.0}, "3": [1, 2]}


def test_exit_codes(monkeypatch, capsys):
    assert cli.main(["run", "flat-2d", "--quiet"]) == cli.EXIT_OK
    assert cli.main(["run", "torus"]) == cli.EXIT_ERROR
    assert cli.main(["run", "cone", "--beta", "1"]) == cli.EXIT_ERROR
    assert cli.main(["run", "flat-2d", "--quadrature.rel_tol", "-1"]) == cli.EXIT_ERROR
    assert cli.main(["qform-kahler", "flat-2d"]) == cli.EXIT_ERROR
    assert "Kahler" in capsys.readouterr().err

    def failing(ctx):
        return sc.CheckRecord("always-fails", 1.0, 0.0, {"abs": 0.0}, False, "test")

    spec = sc.CATALOG["flat-2d"]
    patched = sc.ScenarioSpec(spec.name, spec.description, spec.anchor, spec.params, spec.build,
                              {"always-fails": failing})
    monkeypatch.setitem(sc.CATALOG, "flat-2d", patched)
    assert cli.main(["run", "flat-2d"]) == cli.EXIT_FAIL
    assert "SOME CHECKS FAILED" in capsys.readouterr().out


def test_single_verbs(capsys):
    assert cli.main(["qform", "cone", "--quiet"]) == cli.EXIT_OK
    rep, _ = cli.run_scenario("cone", load_config(), "qform")
    assert rep["checks"]["qform"]["computed"] == pytest.approx(math.pi, rel=0.01)
    rep, _ = cli.run_scenario("cone", load_config(), "sobolev-gate")
    assert rep["checks"]["sobolev-gate-V"]["computed"]["value"] == "inf"
    rep, _ = cli.run_scenario("kahler", load_config(), "qform-kahler")
    assert rep["all_pass"]


def test_thread_count(monkeypatch):
    monkeypatch.setenv("RICCI_THREADS", "3")
    assert cli.thread_count() == 3
    for bad in ("0", "x"):
        monkeypatch.setenv("RICCI_THREADS", bad)
        with pytest.raises(ConfigError):
            cli.thread_count()


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "ricci.runner.cli", "list", "flow"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "sphere-flow" in out.stdout and "cone " not in out.stdout
