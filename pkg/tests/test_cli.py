import csv
import dataclasses
import json
import subprocess
import sys

import pytest

from medtour.cli import EXIT_CONFIG, EXIT_OK, EXIT_USAGE, dispatch
from medtour.config import ScenarioConfig
from medtour.doe import generate_design, orchestrate


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_missing_seed_is_usage_error(tmp_path, capsys):
    assert dispatch(["simulate", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "--seed" in capsys.readouterr().err


def test_unknown_subcommand(tmp_path):
    assert dispatch(["fly", "--out", str(tmp_path)]) == EXIT_USAGE


def test_bad_config_names_field(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("beds.section3 = -1\n")
    code = dispatch(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "beds.section3" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    code = dispatch(["simulate", "--config", str(tmp_path / "none.cfg"), "--seed", "1", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--seed", "4", "--reps", "2", "--horizon-days", "10", "--warmup-days", "1"]
    assert dispatch(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert dispatch(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert read_bytes(tmp_path / "a" / "results.csv") == read_bytes(tmp_path / "b" / "results.csv")
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["master_seed"] == 4 and man["subcommand"] == "simulate"
    assert man["argv"][:3] == ["simulate", "--seed", "4"]
    assert "results.csv" in man["outputs"] and len(man["config_hash"]) == 16


def test_simulate_trace_files(tmp_path):
    out = tmp_path / "t"
    assert dispatch(["simulate", "--seed", "1", "--horizon-days", "5", "--trace", "--out", str(out)]) == EXIT_OK
    assert (out / "transitions_rep0.csv").exists() and (out / "spans_rep0.csv").exists()


def test_doe_gen_is_deterministic(tmp_path):
    assert dispatch(["doe", "gen", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert dispatch(["doe", "gen", "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("design.csv", "design_generators.txt"):
        assert read_bytes(tmp_path / "a" / name) == read_bytes(tmp_path / "b" / name)
    rows = list(csv.reader(open(tmp_path / "a" / "design.csv")))
    assert len(rows) == 257 and rows[0] == list("ABCDEFGHIJKLMNOP")


def test_doe_run_subset_and_refusal(tmp_path):
    base = ["doe", "run", "--seed", "2", "--horizon-days", "2", "--warmup-days", "0", "--runs", "0-2",
            "--out", str(tmp_path)]
    assert dispatch(base) == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "results.csv")))
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
    assert dispatch(base) == EXIT_USAGE
    assert dispatch(base + ["--resume"]) == EXIT_OK


@pytest.fixture(scope="module")
def results_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("res") / "results.csv"
    base = dataclasses.replace(ScenarioConfig(), horizon_days=3, warmup_days=0)
    orchestrate(generate_design(), str(path), master_seed=3, base=base)
    return path


def test_analyze_is_deterministic(results_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert dispatch(["analyze", "--results", str(results_file), "--out", str(a)]) == EXIT_OK
    assert dispatch(["analyze", "--results", str(results_file), "--out", str(b)]) == EXIT_OK
    for name in ("directions.csv", "coefficients.csv", "recommendation.txt"):
        assert read_bytes(a / name) == read_bytes(b / name)


def test_recommend_lists_every_factor(results_file, tmp_path):
    assert dispatch(["recommend", "--results", str(results_file), "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "recommendation.txt").read_text().splitlines()
    assert [ln[0] for ln in lines] == list("ABCDEFGHIJKLMNOP")


def test_compare_table(tmp_path):
    out = tmp_path / "cmp"
    code = dispatch(["compare", "--seed", "1", "--reps", "1", "--horizon-days", "20", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.reader(open(out / "compare.csv")))
    assert rows[0] == ["measure", "unit", "hybrid", "des_only", "des_vs_hybrid"]
    assert len(rows) == 12
    assert rows[1][0] == "Early dropout from the system (min.)"
    assert rows[6][0] == "Recovered patients (max.)"
    assert all(r[4] in {"Higher", "Lower", "Equal", "n/a"} for r in rows[1:])


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "medtour.cli", "simulate", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
