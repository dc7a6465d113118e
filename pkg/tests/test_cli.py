"""End-to-end tests for the command-line interface."""
import json
import math
import os

import numpy as np
import pytest

from marcusfp.cli import main

SIM_DOC = {
    "model": {
        "f": {"name": "scale", "coef": -1.0},
        "sigma": {"name": "linear", "coef": 1.0},
        "triplet": {"b": 0.0, "A": 0.0,
                    "nu": {"kind": "compound_poisson", "rate": 1.0,
                           "density": {"kind": "normal", "mean": 0.0,
                                       "sd": 0.3}}},
    },
    "plan": {"nPaths": 200, "horizon": 0.5, "dt": 0.01, "epsilon": 1e-4,
             "x0": 1.0, "saveTimes": [0.25, 0.5], "seed": 7},
}

HEAT_DOC = {
    "model": {
        "f": {"name": "zero"},
        "sigma": {"name": "constant", "coef": 1.0},
        "triplet": {"b": 0.0, "A": 1.0, "nu": {"kind": "null"}},
    },
    "plan": {"horizon": 0.5, "saveTimes": [0.5]},
    "grid": {"xmin": -8.0, "xmax": 8.0, "n": 400},
    "solve": {"dt": 1e-3, "initial": {"mean": 0.0, "sd": 0.5}},
}


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_missing_config_file_is_config_error(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_invalid_json_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["simulate", "--config", str(path)]) == 2


def test_bad_field_is_named_in_the_diagnostic(tmp_path, capsys):
    doc = json.loads(json.dumps(SIM_DOC))
    doc["plan"]["nPaths"] = -5
    rc = main(["simulate", "--config", _write(tmp_path, doc),
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "plan.nPaths" in capsys.readouterr().err


def test_bad_thread_count_is_config_error(tmp_path):
    assert main(["simulate", "--config", _write(tmp_path, SIM_DOC),
                 "--out", str(tmp_path / "out"), "--threads", "0"]) == 2


def test_simulate_artifacts_and_rerun_guard(tmp_path, capsys):
    cfg = _write(tmp_path, SIM_DOC)
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    runs = os.listdir(out)
    assert len(runs) == 1
    run = os.path.join(out, runs[0])
    with open(os.path.join(run, "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["nPaths"] == 200
    assert summary["times"] == [0.25, 0.5]
    lines = open(os.path.join(run, "ensemble.csv")).read().splitlines()
    assert len(lines) == 1 + 200 * 2  # header + nPaths * |saveTimes|
    # same config again: refuse, then comply under --force
    assert main(["simulate", "--config", cfg, "--out", out]) == 2
    assert main(["simulate", "--config", cfg, "--out", out, "--force"]) == 0


def test_identical_configs_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, SIM_DOC)
    blobs = []
    for sub in ("a", "b"):
        out = str(tmp_path / sub)
        assert main(["simulate", "--config", cfg, "--out", out]) == 0
        run = os.path.join(out, os.listdir(out)[0])
        blobs.append((open(os.path.join(run, "ensemble.bin"), "rb").read(),
                      open(os.path.join(run, "ensemble.csv")).read()))
    assert blobs[0] == blobs[1]


def test_solve_heat_variance_and_manifest(tmp_path):
    cfg = _write(tmp_path, HEAT_DOC)
    out = str(tmp_path / "out")
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    run = os.path.join(out, os.listdir(out)[0])
    with open(os.path.join(run, "manifest.json")) as fh:
        man = json.load(fh)
    assert man["times"] == [0.5]
    assert man["leakBudget"] < 1e-9
    assert man["maxNegativity"] >= -1e-12
    data = np.genfromtxt(os.path.join(run, "density_0000.csv"),
                         delimiter=",", skip_header=1)
    x, v = data[:, 0], data[:, 1]
    dx = x[1] - x[0]
    var = float(np.sum(x * x * v) * dx)
    assert abs(var - 0.75) < 0.75 * 0.01  # var(0) + A t


def test_compare_command_pass_and_fail(tmp_path, capsys):
    # build two density files from the heat run and a shifted copy
    cfg = _write(tmp_path, HEAT_DOC)
    out = str(tmp_path / "solve")
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    run = os.path.join(out, os.listdir(out)[0])
    fa = os.path.join(run, "density_0000.csv")
    data = np.genfromtxt(fa, delimiter=",", skip_header=1)
    fb = str(tmp_path / "shifted.csv")
    with open(fb, "w") as fh:
        fh.write("x,value\n")
        for xi, vi in zip(data[:, 0], np.roll(data[:, 1], 150)):
            fh.write(f"{xi:.17g},{vi:.17g}\n")

    good = {"compare": {"fileA": fa, "fileB": fa}}
    rc = main(["compare", "--config", _write(tmp_path, good, "good.json"),
               "--out", str(tmp_path / "cmp1")])
    assert rc == 0
    assert "pass" in capsys.readouterr().out

    bad = {"compare": {"fileA": fa, "fileB": fb}}
    rc = main(["compare", "--config", _write(tmp_path, bad, "bad.json"),
               "--out", str(tmp_path / "cmp2")])
    assert rc == 4
    run2 = os.path.join(str(tmp_path / "cmp2"),
                        os.listdir(str(tmp_path / "cmp2"))[0])
    with open(os.path.join(run2, "report.json")) as fh:
        rep = json.load(fh)
    assert not rep["verdict"]
    assert rep["l1_distance"] > rep["tolerance"]


@pytest.mark.parametrize("sigma,tol", [
    ({"name": "linear", "coef": 1.0}, 1e-7),
    ({"name": "constant", "coef": 2.0}, 1e-12),
    ({"name": "sine"}, 1e-7),
])
def test_transform_check_command(tmp_path, sigma, tol, capsys):
    doc = {"model": {"sigma": sigma},
           "transformCheck": {"n": 2000, "seed": 1, "tol": tol}}
    out = str(tmp_path / "out")
    rc = main(["transform-check", "--config", _write(tmp_path, doc),
               "--out", out])
    assert rc == 0
    run = os.path.join(out, os.listdir(out)[0])
    with open(os.path.join(run, "report.json")) as fh:
        rep = json.load(fh)
    assert rep["pass"]
    assert rep["confined"]
    assert rep["maxChainError"] <= tol


def test_solve_reports_numeric_failure(tmp_path, capsys):
    # superlinear coefficient: wide jump columns escape in finite time
    doc = {"model": {"f": {"name": "zero"},
                     "sigma": {"name": "one_plus_x2"},
                     "triplet": {"b": 0.0, "A": 0.0,
                                 "nu": {"kind": "alpha_stable",
                                        "alpha": 1.5}}},
           "plan": {"horizon": 0.1, "saveTimes": [0.1]},
           "grid": {"xmin": -4.0, "xmax": 4.0, "n": 100},
           "quad": {"delta": 0.01}}
    rc = main(["solve", "--config", _write(tmp_path, doc),
               "--out", str(tmp_path / "out")])
    assert rc == 3
    assert "solve failed" in capsys.readouterr().err
