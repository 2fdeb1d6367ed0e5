import json
import subprocess
import sys

import numpy as np
import pytest

from tubalinfer.cli import main, parse_mask
from tubalinfer.io import load_tensor, read_csv

SMALL = ["--d1", "12", "--d2", "10", "--d3", "6", "--rank", "2", "--sigma", "0.3", "--frac", "1.0"]


@pytest.fixture
def sim(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", *SMALL, "--seed", "3", "--out", str(out)]) == 0
    return out


def test_simulate_writes_truth_and_observations(sim, capsys):
    T = load_tensor(sim / "truth.tns3")
    assert T.shape == (12, 10, 6)
    meta = json.loads((sim / "simulate.json").read_text())
    assert meta["n"] == 720 and meta["seed"] == 3
    assert len((sim / "obs.jsonl").read_text().splitlines()) == 721


def test_infer_report(sim, tmp_path, capsys):
    out = tmp_path / "inf"
    rc = main(["infer", "--obs", str(sim / "obs.jsonl"), "--rank", "2", "--mask", "1,1,1;3,4,2:0.5",
               "--tensor", str(sim / "truth.tns3"), "--max-iters", "40", "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["ci_low"] <= rep["estimate"] <= rep["ci_high"]
    assert rep["ci_obs_low"] < rep["ci_low"] and rep["truth"] is not None
    assert json.loads(capsys.readouterr().out) == rep


def test_complete_and_diagnose(sim, tmp_path):
    out = tmp_path / "c"
    assert main(["complete", "--obs", str(sim / "obs.jsonl"), "--rank", "2", "--trace",
                 "--truth", str(sim / "truth.tns3"), "--max-iters", "20", "--out", str(out)]) == 0
    assert load_tensor(out / "completed.tns3").shape == (12, 10, 6)
    assert (out / "trace.csv").read_text().startswith("iteration,objective,step")
    assert main(["diagnose", "--tensor", str(sim / "truth.tns3"), "--rank", "2", "--mask", "2,2,2",
                 "--format", "csv", "--out", str(out)]) == 0
    rows = read_csv(out / "diagnostics.csv")
    assert float(rows[0]["mu_max"]) >= 1.0


def test_mc_spec_file(tmp_path):
    spec = {"dims": [12, 10, 6], "r": 2, "sigma": 0.3, "fraction": 1.0, "R": 3, "seed": 5,
            "solver": {"max_iters": 20}}
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec))
    out = tmp_path / "mc"
    assert main(["mc", "--spec", str(p), "--out", str(out)]) == 0
    for name in ("table1.csv", "table2.csv", "hist_M1.csv", "summary.json", "coverage.json"):
        assert (out / name).exists()
    for row in read_csv(out / "table1.csv"):
        if row["bias"]:
            b, sd, mse = (float(row[k]) for k in ("bias", "sd", "mse"))
            assert mse == pytest.approx(b * b + sd * sd, rel=1e-9, abs=1e-15)


def test_reruns_are_byte_identical(tmp_path):
    args = ["mc", *SMALL, "--reps", "2", "--max-iters", "15", "--seed", "8"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([*args, "--out", str(a)]) == 0
    assert main([*args, "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        if name == "summary.json":
            da, db = (json.loads((d / name).read_text()) for d in (a, b))
            for d in (da, db):
                d["provenance"].pop("created")
                d["spec"].pop("out")  # the two runs write to different directories
            assert da == db
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_no_writes_outside_out(tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    assert main(["simulate", *SMALL, "--out", "only_here"]) == 0
    assert [p.name for p in work.iterdir()] == ["only_here"]


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["simulate", "--sigma", "-1"],
    ["simulate", "--rank", "0"],
    ["infer", "--obs", "x.jsonl", "--rank", "2"],
    ["infer", "--obs", "x.jsonl", "--rank", "2", "--mask", "0,1,1"],
    ["infer", "--obs", "x.jsonl", "--rank", "2", "--mask", "1,1,1", "--alpha", "1.5"],
    ["complete", "--obs", "x.jsonl", "--rank", "2", "--max-iters", "0"],
    ["complete", "--obs", "x.jsonl", "--rank", "2", "--validation", "1.0"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["complete", "--obs", str(tmp_path / "missing.jsonl"), "--rank", "2",
                 "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.tns3"
    bad.write_bytes(b"nope")
    assert main(["diagnose", "--tensor", str(bad), "--rank", "1", "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_parse_mask():
    M = parse_mask("1,2,3:0.5; 2,2,2")
    np.testing.assert_array_equal(M.idx, [[0, 1, 2], [1, 1, 1]])
    np.testing.assert_array_equal(M.weights, [0.5, 1.0])


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "tubalinfer.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "complete", "infer", "mc", "diagnose", "grid", "perturb"):
        assert cmd in res.stdout
