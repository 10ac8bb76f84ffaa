import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from tailguard.cli import main
from tailguard.empirical import spearman
from tailguard.induce import ScoreTable


@pytest.fixture(autouse=True)
def fixed_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def run(*args):
    return main([str(a) for a in args])


def write_table(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["prompt_id", "response_id", "machine_score", "human_score"])
        w.writerows(rows)
    return path


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_synth_small_comonotone(tmp_path):
    out = tmp_path / "s.csv"
    assert run("synth", "--prompts", 2, "--set-size", 3, "--rho", 1.0, "--seed", 7, "--out", out) == 0
    table = ScoreTable.read_csv(out)
    assert len(table) == 6
    assert spearman(table.machine, table.human) == 1.0
    manifest = json.loads((tmp_path / "s.csv.manifest.json").read_text())
    assert manifest["realized_spearman"] == 1.0
    assert manifest["command"] == "synth" and manifest["seed"] == 7
    assert manifest["timestamp"] == "2023-11-14T22:13:20Z"
    assert {"config", "inputs", "version"} <= set(manifest)


def test_synth_spearman_in_manifest(tmp_path):
    out = tmp_path / "s.csv"
    assert run("synth", "--prompts", 10000, "--set-size", 1, "--rho", 0.57, "--seed", 1, "--out", out) == 0
    manifest = json.loads((tmp_path / "s.csv.manifest.json").read_text())
    assert manifest["realized_spearman"] == pytest.approx(0.57, abs=0.03)


def test_missing_out_is_usage_error(capsys):
    assert run("synth", "--prompts", 2, "--rho", 0.5) == 2
    err = capsys.readouterr().err
    assert "usage:" in err
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"


def test_bad_flag_values(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run("synth", "--prompts", 2, "--rho", 3.0, "--out", out) == 2
    assert run("calibrate", "--data", out, "--grid", "log:3", "--out", tmp_path / "c.json") == 2
    assert run("sweep", "--prompts", 10, "--methods", "lstat,foo", "--out", tmp_path / "w.csv") == 2


def test_calibrate_zero_table_and_determinism(tmp_path):
    data = write_table(tmp_path / "z.csv", [(f"p{i}", f"r{j}", (i + j) / 20, 0.0) for i in range(8) for j in range(3)])
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run("calibrate", "--data", data, "--out", out) == 0
    assert a.read_bytes() == b.read_bytes()
    result = json.loads(a.read_text())
    assert result["lambda_hat"] == 1.0
    assert result["config"]["method"] == "lstat" and result["config"]["alpha"] == 0.3
    assert result["config"]["measure"] == {"kind": "cvar", "beta": 0.9}
    assert result["n"] == 8 and len(result["curve"]) == 101
    manifest = json.loads((tmp_path / "a.json.manifest.json").read_text())
    assert list(manifest["inputs"].values())[0] == __import__("hashlib").sha256(data.read_bytes()).hexdigest()


def test_calibrate_bad_row_names_line(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("prompt_id,response_id,machine_score,human_score\np,a,0.1,0.2\np,b,0.1,oops\n")
    assert run("calibrate", "--data", data, "--out", tmp_path / "c.json") == 3
    err = last_error(capsys)
    assert err["line"] == 3 and "line 3" in err["message"]
    assert run("calibrate", "--data", tmp_path / "missing.csv", "--out", tmp_path / "c.json") == 3


def test_calibrate_progress(tmp_path, capsys):
    data = write_table(tmp_path / "t.csv", [("p", "a", 0.2, 0.1), ("q", "a", 0.4, 0.3)])
    assert run("calibrate", "--data", data, "--grid", "uniform:5", "--progress", "--out", tmp_path / "c.json") == 0
    assert capsys.readouterr().err.count("lambda ") == 5


def test_evaluate_paths(tmp_path, capsys):
    zero = write_table(tmp_path / "z.csv", [(f"p{i}", f"r{j}", (i + j) / 20, 0.0) for i in range(8) for j in range(3)])
    cal = tmp_path / "c.json"
    assert run("calibrate", "--data", zero, "--out", cal) == 0
    rep = tmp_path / "e.json"
    assert run("evaluate", "--data", zero, "--calibration", cal, "--out", rep) == 0
    report = json.loads(rep.read_text())
    assert report["realized_risk"] == 0 and report["cost_mean"] == 1 and report["abstention_rate"] == 0

    two = write_table(tmp_path / "two.csv", [("a", "1", 0.1, 0.2), ("a", "2", 0.9, 0.5)]
                      + [("b", str(i), 0.1 if i == 0 else 0.9, 0.3) for i in range(4)])
    assert run("evaluate", "--data", two, "--lambda-hat", 0.5, "--out", rep) == 0
    assert json.loads(rep.read_text())["cost_mean"] == 3.0

    assert run("evaluate", "--data", two, "--lambda-hat", 0.505, "--out", rep) == 4
    assert last_error(capsys)["error"] == "semantic"
    assert run("evaluate", "--data", zero, "--calibration", cal, "--lambda-hat", 0.123, "--out", rep) == 4
    assert run("evaluate", "--data", two, "--out", rep) == 2
    (tmp_path / "junk.json").write_text("{")
    assert run("evaluate", "--data", two, "--calibration", tmp_path / "junk.json", "--out", rep) == 3


def test_sweep_smoke_and_determinism(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.csv"
        start = time.perf_counter()
        assert run("sweep", "--prompts", 50, "--repeats", 2, "--seed", 3, "--out", out) == 0
        assert time.perf_counter() - start < 60
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert (tmp_path / "a.summary.csv").read_bytes() == (tmp_path / "b.summary.csv").read_bytes()
    header = outs[0].read_text().splitlines()[0]
    assert header == "alpha,beta,method,repeat,lambda_hat,realized_risk,cost_mean,abstention_rate"
    assert (tmp_path / "a.summary.csv").read_text().startswith("alpha,beta,method,metric,mean,stderr\n")
    assert (tmp_path / "a.csv.manifest.json").exists() and (tmp_path / "a.summary.csv.manifest.json").exists()


def test_sweep_from_data_with_bj_cap(tmp_path):
    data = tmp_path / "s.csv"
    assert run("synth", "--prompts", 40, "--set-size", 6, "--rho", 0.7, "--out", data) == 0
    out = tmp_path / "w.csv"
    assert run("sweep", "--data", data, "--methods", "lstat,bj", "--repeats", 3, "--repeats-bj", 1,
               "--alphas", "0.3", "--betas", "0.9", "--grid", "quantile:21", "--out", out, "--summary", tmp_path / "sum.csv") == 0
    rows = list(csv.DictReader(open(out)))
    assert sum(r["method"] == "lstat" for r in rows) == 3
    assert sum(r["method"] == "bj" for r in rows) == 1


def test_suggest_alpha(tmp_path, capsys):
    data = write_table(tmp_path / "t.csv", [("p", f"r{i}", 0.5, i / 10) for i in range(1, 11)])
    assert run("suggest-alpha", "--data", data, "--q", "0,0.2", "--beta", 0.5) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["0.0"] == pytest.approx(0.8) and out["0.2"] == pytest.approx(0.65)
    target = tmp_path / "alpha.json"
    assert run("suggest-alpha", "--data", data, "--out", target) == 0
    assert set(json.loads(target.read_text())) == {"0.01", "0.05", "0.1", "0.15", "0.2"}


def test_candidates_mock_and_pool(tmp_path):
    scores, texts = tmp_path / "c.csv", tmp_path / "texts.csv"
    assert run("candidates", "--prompts", 4, "--seed", 2, "--out", scores, "--texts", texts) == 0
    first = scores.read_bytes()
    assert run("candidates", "--prompts", 4, "--seed", 2, "--out", scores, "--texts", texts) == 0
    assert scores.read_bytes() == first
    table = ScoreTable.read_csv(scores)
    assert 0 < len(table) <= 4 * 32
    pooled = tmp_path / "pooled.csv"
    assert run("candidates", "--pool", texts, "--similarity-threshold", 1.0, "--out", pooled) == 0
    assert len(ScoreTable.read_csv(pooled)) == len(table)
    assert run("candidates", "--out", pooled) == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "s.csv"
    proc = subprocess.run([sys.executable, "-m", "tailguard", "synth", "--prompts", "3", "--rho", "0.5", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "tailguard", "calibrate"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage:" in proc.stderr
