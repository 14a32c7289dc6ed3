import json
import subprocess
import sys

import numpy as np
import pytest

from macscale import scalar_model, two_sided_up, w_sequence
from macscale.cli import main, matrices_from_report
from models import model_a


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, m in [("a", model_a()), ("walk", scalar_model(0.6)), ("crit", scalar_model(0.5))]:
        p = tmp_path / f"{name}.json"
        p.write_text(m.to_json())
        paths[name] = str(p)
    bad = tmp_path / "bad.json"
    # row sum 1.2: well formed but not a transition law
    bad.write_text(json.dumps({"n_phases": 1, "max_down_jump": 0,
                               "blocks": {"A1": [[0.9]], "A0": [[0.3]]}}))
    paths["bad"] = str(bad)
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    paths["junk"] = str(junk)
    return paths


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_ok(capsys, files):
    code, out, _ = run(capsys, "validate", files["a"])
    rep = json.loads(out)
    assert code == 0 and rep["diagnostics"]["ok"]
    assert rep["diagnostics"]["classification"] == "DriftsUp"
    assert rep["model_hash"] and rep["tool"] == "macscale"


def test_validate_failure_exit_code(capsys, files):
    code, out, _ = run(capsys, "validate", files["bad"])
    assert code == 1 and not json.loads(out)["diagnostics"]["ok"]
    code, _, _ = run(capsys, "solve-g", files["bad"])
    assert code == 1


def test_missing_or_malformed_file(capsys, files, tmp_path):
    code, _, err = run(capsys, "validate", str(tmp_path / "nope.json"))
    assert code == 1 and "cannot read" in err
    code, _, err = run(capsys, "validate", files["junk"])
    assert code == 1 and "not valid JSON" in err


def test_numerical_failure_exit_code(capsys, files):
    code, out, err = run(capsys, "exit", "one-down", files["crit"], "--b", "1")
    rep = json.loads(out)
    assert code == 2 and "null-recurrent" in rep["diagnostics"]["error"]


def test_usage_exit_code(capsys, files):
    assert run(capsys, "frobnicate")[0] == 3
    assert run(capsys, "exit", "two-up", files["a"], "--a", "2")[0] == 3
    assert run(capsys, "scale", files["a"])[0] == 3


def test_two_up_matches_library(capsys, files):
    code, out, _ = run(capsys, "exit", "two-up", files["a"], "--a", "3", "--b", "2")
    assert code == 0
    mats = matrices_from_report(out)
    ref = two_sided_up(w_sequence(model_a(), 6), 3, 2)
    assert np.array_equal(mats["two_sided_up"], ref)
    entry = json.loads(out)["outputs"][0]
    assert entry["rows"] == entry["cols"] == 2 and entry["params"] == {"a": 3, "b": 2, "v": 1.0}


def test_json_round_trip_bit_exact(capsys, files):
    code, out, _ = run(capsys, "reflect", "two", files["a"], "--d", "3", "--x", "-1", "--z", "0.7",
                       "--v", "0.9")
    rep = json.loads(out)
    back = matrices_from_report(json.dumps(rep))
    for o in rep["outputs"]:
        assert np.array_equal(back[o["name"]], np.array(o["data"]))
    assert set(back) == {"two_sided_reflection_pgf", "f_star"}


def test_csv_and_out_file(capsys, files, tmp_path):
    target = tmp_path / "r.csv"
    code, out, _ = run(capsys, "solve-g", files["walk"], "--format", "csv", "--out", str(target))
    assert code == 0 and out == ""
    lines = target.read_text().splitlines()
    assert lines[0] == "name,row,col,value,params"
    assert lines[1].startswith("G,0,0,1.0")


def test_scale_and_regulators(capsys, files):
    code, out, _ = run(capsys, "scale", files["walk"], "--nmax", "2")
    ws = [o for o in json.loads(out)["outputs"] if o["name"] == "W"]
    assert [o["params"]["n"] for o in ws] == [0, 1, 2]
    assert ws[2]["data"][0][0] == pytest.approx(25 / 9)
    code, out, _ = run(capsys, "regulators", files["a"], "--d", "1", "--z", "1", "--v", "1")
    P = matrices_from_report(out)["regulator_joint_transform"]
    assert code == 0 and np.allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_oracle_commands(capsys, files):
    code, out, _ = run(capsys, "oracle", "strip", files["walk"], "--lower", "-2", "--upper", "2")
    assert code == 0 and matrices_from_report(out)["strip_up"][0, 0] == pytest.approx(9 / 13)
    argv = ["oracle", "simulate", files["walk"], "--lower", "-2", "--upper", "2", "--n-paths", "5000",
            "--seed", "3"]
    code, out1, _ = run(capsys, *argv)
    code, out2, _ = run(capsys, *argv)
    assert code == 0
    assert np.array_equal(matrices_from_report(out1)["mean"], matrices_from_report(out2)["mean"])


def test_warnings_recorded(capsys, files):
    code, out, _ = run(capsys, "exit", "one-down", files["a"], "--b", "2", "--z", "0.9")
    assert code == 0
    assert any("DomainWarning" in w for w in json.loads(out)["diagnostics"]["warnings"])


def test_verify_model_a(capsys, files):
    code, out, err = run(capsys, "verify", files["a"])
    rep = json.loads(out)
    assert code == 0 and rep["diagnostics"]["passed"]
    assert "FAIL" not in err and "PASS" in err


def test_module_entry_point(files):
    res = subprocess.run([sys.executable, "-m", "macscale", "solve-g", files["walk"]],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert matrices_from_report(res.stdout)["G"][0, 0] == 1.0
