import json
import subprocess
import sys

import pytest

from qslab import cli


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _report(path):
    data = json.loads(path.read_text())
    data.pop("timestamp")
    return data


def test_hirzebruch_suite_report(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, text, _ = _run(["hirzebruch", "--out", str(out)], capsys)
    assert code == 0
    assert "20/20 checks passed" in text
    data = json.loads(out.read_text())
    assert {"schema_version", "suite", "seed", "config", "environment", "records", "passed",
            "timestamp"} <= set(data)
    assert data["schema_version"] == cli.SCHEMA_VERSION and data["passed"] is True
    assert set(data["records"][0]) == {"name", "anchor", "value", "tolerance", "passed", "relation"}
    assert data["environment"]["threads"] == 1
    assert "elapsed_s" in data["timestamp"]


def test_reports_deterministic(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"group_trials": 200}))
    paths = [tmp_path / f"g{i}.json" for i in range(2)]
    for p in paths:
        assert _run(["group", "--config", str(cfg), "--seed", "7", "--out", str(p)], capsys)[0] == 0
    assert _report(paths[0]) == _report(paths[1])
    other = tmp_path / "g_other.json"
    _run(["group", "--config", str(cfg), "--seed", "8", "--out", str(other)], capsys)
    assert _report(other)["seed"] == 8


def test_seed_precedence(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3}))
    out = tmp_path / "r.json"
    monkeypatch.setenv("QSLAB_SEED", "11")
    _run(["hirzebruch", "--out", str(out)], capsys)
    assert _report(out)["seed"] == 11
    _run(["hirzebruch", "--config", str(cfg), "--out", str(out)], capsys)
    assert _report(out)["seed"] == 3
    _run(["hirzebruch", "--config", str(cfg), "--seed", "5", "--out", str(out)], capsys)
    assert _report(out)["seed"] == 5
    monkeypatch.delenv("QSLAB_SEED")
    _run(["hirzebruch", "--out", str(out)], capsys)
    assert _report(out)["seed"] == 0


def test_failing_suite_exits_one(capsys):
    # the literal radial factor misses theta(0), so that record fails
    code, text, _ = _run(["fiber", "--grid", "16,16,8,8"], capsys)
    assert code == 1
    assert "FAIL  fiber identity residual, literal radial factor" in text
    assert "PASS  radial factor of 1-r^2" in text


@pytest.mark.parametrize("argv", [
    ["hirzebruch", "--config", "/nonexistent/c.json"],
    ["hirzebruch", "--level", "0"],
    ["hirzebruch", "--eps", "0.7"],
    ["hirzebruch", "--grid", "4,4,4,4"],
    ["hirzebruch", "--out", "/nonexistent/dir/r.json"],
    ["hirzebruch", "--k", "0"],
    ["sphere", "--field", "import os", "--level", "1"],
    ["group-qm", "--pattern", "a1"],
    ["median", "--field", "z", "--level", "1", "--report", "/nonexistent/dir/m.json"],
])
def test_usage_errors_exit_two(argv, capsys):
    code, _, err = _run(argv, capsys)
    assert code == 2
    assert err.startswith("qslab: error:")


def test_bad_config_keys(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert _run(["hirzebruch", "--config", str(cfg)], capsys)[0] == 2


def test_bad_env_seed(monkeypatch, capsys):
    monkeypatch.setenv("QSLAB_SEED", "abc")
    assert _run(["hirzebruch"], capsys)[0] == 2


def test_argparse_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["nosuch"])
    assert info.value.code == 2


def test_hirzebruch_tool(capsys):
    code, text, _ = _run(["hirzebruch", "--k", "4"], capsys)
    assert code == 0 and "ptxCP1: class [2, 1] area 6" in text
    code, text, _ = _run(["hirzebruch", "--k", "5", "--json"], capsys)
    data = json.loads(text)
    assert data["areas"] == {"L": 8, "E": 7} and data["type"] == "CP2#-CP2"


def test_group_tool(capsys, monkeypatch):
    monkeypatch.setenv("QSLAB_SEED", "4")
    code, text, _ = _run(["group-qm", "--pattern", "ab", "--trials", "200"], capsys)
    data = json.loads(text)
    assert code == 0 and data["seed"] == 4
    assert 0 < data["defect_lower_bound"] <= data["defect_bound"] == 3.0
    assert data["homogenized"]["value"] == 1.0


def test_sphere_tool_exports(tmp_path, capsys):
    off, csv = tmp_path / "m.off", tmp_path / "f.csv"
    code, text, _ = _run(["sphere", "--level", "1", "--field", "z", "--off", str(off), "--csv", str(csv)], capsys)
    data = json.loads(text)
    assert code == 0 and data["n_vertices"] == 42 and data["euler_characteristic"] == 2
    assert data["energy_drift_time_one"] < 1e-5
    assert off.read_text().startswith("OFF\n42 80 120\n")
    assert csv.read_text().splitlines()[0] == "vertex_index,value"


def test_median_tool(tmp_path, capsys):
    rep = tmp_path / "m.json"
    code, text, _ = _run(["median", "--level", "2", "--field", "z", "--tau-cap-area", "0.2",
                          "--report", str(rep)], capsys)
    data = json.loads(rep.read_text())
    assert code == 0 and data == json.loads(text)
    assert data["tau"]["upper_bound"] == 0.0
    assert abs(data["reeb"]["total_measure"] - 1.0) < 1e-12


def test_bundle_tool(capsys):
    code, text, _ = _run(["bundle", "--check", "sgrad", "--grid", "32,32,16,16"], capsys)
    data = json.loads(text)
    assert code == 0 and data["check"] == "sgrad" and data["max_rel"] < 1e-3


def test_config_validation():
    with pytest.raises(cli.UsageError):
        cli.ExperimentConfig(suite="nope")
    with pytest.raises(cli.UsageError):
        cli.ExperimentConfig(dt=0.0)
    cfg = cli.ExperimentConfig.from_mapping({"grid": [16, 16, 8, 8]})
    assert cfg.grid == (16, 16, 8, 8)


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "qslab.cli", "hirzebruch", "--k", "2", "--json"],
                         capture_output=True, text=True, check=True)
    assert json.loads(res.stdout)["areas"] == {"CP1xpt": 1, "ptxCP1": 3}
