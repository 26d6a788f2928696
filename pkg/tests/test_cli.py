import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from oewt.cli import run_cli


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    rc = run_cli(["generate", "--pop-size", "20000", "--target-nb", "5000", "--n-a", "1500",
                  "--seed", "3", "--out", str(out), "--dump-population", str(out / "pop.csv"), "--no-timestamp"])
    assert rc == 0
    return out


def test_generate_outputs(demo):
    with open(demo / "pop.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["id", "x1", "x2", "x3", "x4", "y", "pi_b_true"]
    truth = json.loads((demo / "truth.json").read_text())
    assert truth["N"] == 20000 and "timestamp" not in truth
    with open(demo / "big.csv") as fh:
        assert next(csv.reader(fh)) == ["id", "x1", "x2", "x3", "x4", "y", "design_weight"]


@pytest.mark.parametrize("method", ["oe", "clw", "kw", "vd", "wvl"])
def test_fit_writes_weights_and_diagnostics(demo, tmp_path, method, capsys):
    w = tmp_path / "w.csv"
    rc = run_cli(["fit", "--method", method, "--ref", str(demo / "reference.csv"),
                  "--big", str(demo / "big.csv"), "--out", str(w), "--no-timestamp"])
    assert rc == 0
    diag = json.loads(capsys.readouterr().out)
    assert diag["converged"] and len(diag["theta_hat"]) == 5
    assert diag["method"] == method.upper()
    rows = list(csv.DictReader(open(w)))
    assert list(rows[0]) == ["id", "pi_hat", "weight"]
    for r in rows[:20]:
        assert float(r["weight"]) == pytest.approx(1 / float(r["pi_hat"]))
    assert json.loads((tmp_path / "w.json").read_text()) == diag


@pytest.mark.parametrize("variant", ["standard", "alt", "none"])
def test_estimate(demo, tmp_path, variant, capsys):
    w = tmp_path / "w.csv"
    run_cli(["fit", "--method", "oe", "--ref", str(demo / "reference.csv"), "--big", str(demo / "big.csv"),
             "--out", str(w), "--no-timestamp"])
    capsys.readouterr()
    rc = run_cli(["estimate", "--weights", str(w), "--big", str(demo / "big.csv"), "--ref", str(demo / "reference.csv"),
                  "--pop-size", "20000", "--variance", variant, "--no-timestamp"])
    assert rc == 0
    res = json.loads(capsys.readouterr().out)
    truth = json.loads((demo / "truth.json").read_text())["population_mean"]
    assert abs(res["mu_hat"] - truth) / truth < 0.1
    if variant == "none":
        assert "variance" not in res
    else:
        comp = res["variance_components"]
        assert set(comp) >= {"residual_term", "design_term", "third_term", "total"}
        assert res["ci_lower"] < res["mu_hat"] < res["ci_upper"]
        assert comp["variant"] == variant


def test_byte_identical_outputs(demo, tmp_path, capsys):
    outs = []
    for k in range(2):
        w = tmp_path / f"w{k}.csv"
        e = tmp_path / f"e{k}.json"
        run_cli(["fit", "--method", "oe", "--ref", str(demo / "reference.csv"), "--big", str(demo / "big.csv"),
                 "--out", str(w), "--no-timestamp"])
        run_cli(["estimate", "--weights", str(w), "--big", str(demo / "big.csv"), "--ref", str(demo / "reference.csv"),
                 "--pop-size", "20000", "--out", str(e), "--no-timestamp"])
        outs.append((w.read_bytes(), e.read_bytes()))
    assert outs[0] == outs[1]
    capsys.readouterr()


def test_timestamp_present_by_default(demo, tmp_path, capsys):
    run_cli(["fit", "--method", "clw", "--ref", str(demo / "reference.csv"), "--big", str(demo / "big.csv")])
    assert "timestamp" in json.loads(capsys.readouterr().out)


def test_usage_errors(capsys):
    assert run_cli(["fit", "--bogus"]) == 1
    assert run_cli(["nonsense"]) == 1
    assert run_cli([]) == 1
    assert "usage" in capsys.readouterr().err


def test_validation_errors(demo, tmp_path, capsys):
    assert run_cli(["fit", "--method", "oe", "--ref", str(tmp_path / "missing.csv"), "--big", str(demo / "big.csv")]) == 1
    ref = tmp_path / "noflag.csv"
    with open(demo / "reference.csv") as src, open(ref, "w", newline="") as dst:
        r = csv.DictReader(src)
        w = csv.DictWriter(dst, [f for f in r.fieldnames if f != "in_big"])
        w.writeheader()
        for row in r:
            row.pop("in_big")
            w.writerow(row)
    assert run_cli(["fit", "--method", "oe", "--ref", str(ref), "--big", str(demo / "big.csv")]) == 1
    assert run_cli(["fit", "--method", "clw", "--ref", str(ref), "--big", str(demo / "big.csv")]) == 0
    w = tmp_path / "w.csv"
    run_cli(["fit", "--method", "oe", "--ref", str(demo / "reference.csv"), "--big", str(demo / "big.csv"), "--out", str(w)])
    assert run_cli(["estimate", "--weights", str(w), "--big", str(demo / "big.csv"), "--variance", "standard"]) == 1
    capsys.readouterr()


def test_numerical_failure_exit_code(demo, monkeypatch, capsys):
    from oewt import propensity
    from oewt.errors import NumericalError

    def broken(*args, **kwargs):
        raise NumericalError("negative Hessian is not positive definite")

    monkeypatch.setattr(propensity, "fit", broken)
    rc = run_cli(["fit", "--method", "oe", "--ref", str(demo / "reference.csv"), "--big", str(demo / "big.csv")])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err


def test_simulate_small(tmp_path, capsys):
    conf = tmp_path / "s.conf"
    conf.write_text("N = 5000\nn_A = 400\nreplicates = 3\nrho = 0.3, 0.7\ntarget_NB = 1000\n")
    out = tmp_path / "r.csv"
    rc = run_cli(["simulate", "--config", str(conf), "--out", str(out), "--seed", "42", "--no-timestamp"])
    assert rc == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2 * 6
    assert {r["seed"] for r in rows} == {"42"}
    table = capsys.readouterr().out
    assert "rho(y, x'beta) = 0.3" in table and "# generated" not in table
    rc = run_cli(["simulate", "--config", str(conf), "--out", str(tmp_path / "r2.csv"), "--seed", "42", "--no-timestamp",
                  "--reps", "3", "--workers", "2"])
    assert rc == 0
    assert (tmp_path / "r2.csv").read_bytes() == out.read_bytes()
    capsys.readouterr()


def test_simulate_rejects_bad_workers(tmp_path, capsys):
    assert run_cli(["simulate", "--workers", "0"]) == 1
    capsys.readouterr()


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "oewt.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "oewt" in out.stdout
    env_run = subprocess.run(
        [sys.executable, "-m", "oewt.cli", "fit", "--method", "oe", "--ref", "nope.csv", "--big", "nope.csv"],
        capture_output=True, text=True, env={"OEWT_LOG": "DEBUG", "PATH": ""},
    )
    assert env_run.returncode == 1 and "ERROR" in env_run.stderr
