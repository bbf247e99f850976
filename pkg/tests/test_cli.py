import csv
import json
import subprocess
import sys

import pytest

from reachkit.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_pendulum_passes(capsys):
    code, out, _ = _run(capsys, "check", "pendulum")
    rep = json.loads(out)
    assert code == 0 and rep["verdict"] == "PASS"
    assert rep["margin"] == pytest.approx(0.1566, rel=0.005)
    assert rep["settings"]["grid"] == 400


def test_check_echoes_bundled_constants(capsys):
    _, out, _ = _run(capsys, "check", "pendulum")
    echo = json.loads(out)["config"]["source"]
    assert echo["bounds_override"] == {"alpha": 3.6014, "beta": 4.4721, "gamma": 2.9665, "xi": 1.4832}
    assert (echo["delta"], echo["epsilon"], echo["lambda"]) == (0.003, 0.001, 0.001)


def test_check_large_lambda_fails_with_witness(capsys):
    code, out, _ = _run(capsys, "check", "pendulum", "--lambda-override", "10")
    rep = json.loads(out)
    assert code == 1 and rep["verdict"] == "FAIL"
    assert rep["min_residual"] < 0 and len(rep["witness"]) == 2
    assert rep["config"]["overrides"] == {"lam": 10.0}


def test_check_cruise_reports_margin(capsys):
    code, out, _ = _run(capsys, "check", "cruise", "--grid", "30")
    rep = json.loads(out)
    assert rep["margin"] == pytest.approx(5.446, rel=0.001)
    assert code == (0 if rep["verdict"] == "PASS" else 1)


def test_missing_file_exit_2(capsys, tmp_path):
    missing = tmp_path / "nope.json"
    code, _, err = _run(capsys, "check", str(missing))
    assert code == 2 and str(missing) in err


def test_invalid_config_exit_2(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"name": "x"}')
    code, _, err = _run(capsys, "check", str(p))
    assert code == 2 and "missing" in err


def test_bad_json_exit_2(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert _run(capsys, "bounds", str(p))[0] == 2


def test_usage_errors_exit_2(capsys):
    assert _run(capsys, "sim", "pendulum")[0] == 2
    assert _run(capsys, "sim", "pendulum", "--x0", "0.1")[0] == 2
    assert _run(capsys, "sim", "pendulum", "--x0", "0.9,0")[0] == 2
    assert _run(capsys, "check", "pendulum", "--grid", "-3")[0] == 2
    assert _run(capsys, "sim", "pendulum", "--x0", "0,0", "--noise", "gauss")[0] == 2
    assert _run(capsys, "frobnicate")[0] == 2


def test_bounds_compares_with_override(capsys):
    code, out, _ = _run(capsys, "bounds", "pendulum", "--grid", "400")
    rep = json.loads(out)
    assert code == 0
    for c, row in rep["constants"].items():
        assert row["provenance"] == "estimated"
        assert 0.99 <= row["ratio_raw_to_override"] <= 1.005, c
        assert row["value"] == pytest.approx(1.02 * row["raw"])
    assert rep["settings"]["guard"] == 1.02


def test_bounds_csv(capsys):
    code, out, _ = _run(capsys, "bounds", "pendulum_estimate", "--grid", "51", "--format", "csv", "--guard", "1.0")
    rows = list(csv.DictReader(out.splitlines()))
    assert code == 0 and [r["constant"] for r in rows] == ["alpha", "beta", "gamma", "xi"]
    assert all(r["value"] == r["raw"] for r in rows)


def test_sim_writes_csv_and_confirms(capsys, tmp_path):
    out_csv = tmp_path / "traj.csv"
    code, out, _ = _run(capsys, "sim", "pendulum", "--x0", "-0.4,0.3", "--seed", "7", "--out", str(out_csv))
    rep = json.loads(out)
    assert code == 0 and rep["outcome"]["kind"] == "GoalConfirmed"
    rows = list(csv.DictReader(out_csv.read_text().splitlines()))
    assert rows[0]["is_sample"] == "1" and rows[-1]["confirmed"] == "1"
    assert rep["settings"]["noise"] == "ball" and rep["settings"]["substeps"] == 10


def test_sim_smaller_delta_gives_finer_staircase(capsys, tmp_path):
    coarse, fine = tmp_path / "a.csv", tmp_path / "b.csv"
    _run(capsys, "sim", "pendulum", "--x0", "-0.4,0.3", "--seed", "7", "--out", str(coarse))
    code, out, _ = _run(capsys, "sim", "pendulum", "--x0", "-0.4,0.3", "--seed", "7", "--delta", "0.0003",
                        "--out", str(fine))
    assert code == 0

    def steps(path):
        rows = list(csv.DictReader(path.read_text().splitlines()))
        u = [float(r["u_1"]) for r in rows]
        return max(abs(a - b) for a, b in zip(u, u[1:]))

    assert steps(fine) < steps(coarse)


def test_sim_closed_loop(capsys):
    code, out, _ = _run(capsys, "sim", "pendulum", "--x0", "-0.4,0.3", "--closed-loop", "--T", "5")
    assert code == 0 and json.loads(out)["settings"]["mode"] == "closed_loop"


def test_sim_inconclusive_exit_1(capsys):
    code, out, _ = _run(capsys, "sim", "pendulum", "--x0", "-0.4,0.3", "--T", "0.1")
    assert code == 1 and json.loads(out)["outcome"]["kind"] == "Inconclusive"


def test_sim_csv_to_stdout(capsys):
    code, out, _ = _run(capsys, "sim", "pendulum", "--x0=-0.4,0.3", "--format", "csv", "--T", "0.01")
    assert out.splitlines()[0].startswith("t,x_1,x_2,u_1")


def test_perturb_defaults_to_certified_bound(capsys):
    code, out, _ = _run(capsys, "perturb", "pendulum", "--x0", "-0.4,0.3", "--seed", "2")
    rep = json.loads(out)
    assert code == 0 and rep["settings"]["dbar"] == pytest.approx(0.0528, rel=0.005)


def test_batch_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _run(capsys, "batch", "pendulum", "--runs", "20", "--seed", "3", "--out", str(a))[0] == 0
    assert _run(capsys, "batch", "pendulum", "--runs", "20", "--seed", "3", "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["confirmed"] == 20


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "reachkit.cli", "check", "pendulum", "--lambda-override", "10", "--grid", "101"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1
    assert json.loads(proc.stdout)["verdict"] == "FAIL"
