import csv
import json
import os
from pathlib import Path

import pytest

from hierdt.cli import main

DATA = Path(__file__).resolve().parents[1] / "configs" / "data"


def small_config(tmp_path, **overrides):
    cfg = {
        "seed": 7,
        "dataset": {"train": str(DATA / "train.tsv"), "validation": str(DATA / "validation.tsv"),
                    "test": str(DATA / "test.tsv"), "vocab": str(DATA / "vocab.txt")},
        "grammar": {"pairs": [["(", ")"], ["[", "]"], ["{", "}"], ["<", ">"]], "max_depth": 4},
        "model": {"context_len": 2},
        "partition": {"alpha": 0.5, "n_clients": 10, "n_groups": 2, "n_isolated": 2},
        "fl": {"rounds": 2, "participation": 0.5, "epochs_per_round": 2, "lr": 10.0, "metric": "sample_ratio"},
        "merge": {"method": "dare", "drop_rate": 0.5, "metric": "sample_ratio"},
        "eval": {"n_samples": 1, "metric_samples": 1, "max_len": 10},
        "trueput": {"p": 0.3, "k_max": 16, "capacities": [1, 2, 4, 8], "budget_samples": 2,
                    "grid_model": "uniform"},
        "decode": {"tree_sizes": [1, 4, 16, 48], "n_prompts": 5, "learn_steps": 50, "max_len": 16},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            cfg[key] = {**cfg.get(key, {}), **value}
        else:
            cfg[key] = value
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_partition_manifest(tmp_path):
    out = tmp_path / "p"
    assert main(["partition", small_config(tmp_path), "--out", str(out)]) == 0
    lines = (out / "manifest.tsv").read_text().splitlines()
    assert len(lines) == 10
    assert (out / "config.json").exists() and (out / "meta" / "timing.json").exists()
    summary = json.loads((out / "partition.json").read_text())
    assert summary["n_samples"] == sum(1 for _ in open(DATA / "train.tsv"))


def test_missing_dataset_fails_cleanly(tmp_path):
    cfg = small_config(tmp_path, dataset={"train": str(tmp_path / "nope.tsv")})
    out = tmp_path / "p"
    assert main(["partition", cfg, "--out", str(out)]) == 2
    assert not out.exists()


def test_unknown_config_key(tmp_path, capsys):
    cfg = small_config(tmp_path, fl={"roundz": 3})
    assert main(["run", cfg, "--out", str(tmp_path / "r")]) == 2
    assert "roundz" in capsys.readouterr().err


def test_invalid_value_is_a_config_error(tmp_path):
    cfg = small_config(tmp_path, partition={"alpha": -1.0})
    assert main(["partition", cfg, "--out", str(tmp_path / "p")]) == 2


def test_same_seed_gives_identical_files(tmp_path):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        assert main(["partition", cfg, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (tmp_path / "b" / "manifest.tsv").read_bytes()
    assert main(["partition", cfg, "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "manifest.tsv").read_bytes() != (tmp_path / "c" / "manifest.tsv").read_bytes()


def test_run_all_modes(tmp_path):
    out = tmp_path / "r"
    assert main(["run", small_config(tmp_path), "--mode", "all", "--out", str(out)]) == 0
    rows = read_rows(out / "comparison.csv")
    assert [r["mode"] for r in rows] == ["hierarchy", "flat_fl", "merge_only", "local_only"]
    by_mode = {r["mode"]: r for r in rows}
    assert int(by_mode["hierarchy"]["central_transfers"]) == 2 + 2
    assert int(by_mode["merge_only"]["central_transfers"]) == 10
    assert int(by_mode["flat_fl"]["central_transfers"]) == 2 * 5
    assert int(by_mode["local_only"]["central_transfers"]) == 0
    manifest = [json.loads(line) for line in (out / "manifest.jsonl").read_text().splitlines()]
    assert manifest[0]["record"] == "config"
    assert (out / "merge_hierarchy.csv").exists() and (out / "rounds_flat_fl.csv").exists()


def test_flat_fl_without_rounds_keeps_init_accuracy(tmp_path):
    out = tmp_path / "r"
    assert main(["run", small_config(tmp_path, fl={"rounds": 0}), "--mode", "flat_fl", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["modes"]["flat_fl"]["syntax_accuracy"] == summary["init"]["syntax_accuracy"]
    assert summary["modes"]["flat_fl"]["central_transfers"] == 0


def test_trueput_table(tmp_path):
    out = tmp_path / "t"
    assert main(["trueput", small_config(tmp_path), "--out", str(out)]) == 0
    table = read_rows(out / "optimal_k.csv")
    ks = [int(r["k_star"]) for r in table]
    assert len(table) == 4 and ks == sorted(ks)
    grid = read_rows(out / "grid.csv")
    assert [int(r["rank"]) for r in grid] == list(range(1, len(grid) + 1))
    assert "wall_time" not in grid[0]
    assert (out / "meta" / "grid_timing.csv").exists()


def test_trueput_degenerate_profiles(tmp_path):
    out = tmp_path / "t1"
    assert main(["trueput", "sweep", small_config(tmp_path, trueput={"k_max": 1}), "--out", str(out)]) == 0
    assert {r["k_star"] for r in read_rows(out / "optimal_k.csv")} == {"1"}
    out = tmp_path / "t2"
    cfg = small_config(tmp_path, trueput={"k_max": 9, "latency": {"kind": "constant", "t0": 1.0}})
    assert main(["trueput", "sweep", cfg, "--out", str(out)]) == 0
    assert {r["k_star"] for r in read_rows(out / "optimal_k.csv")} == {"9"}


def test_trueput_sweep_needs_no_dataset(tmp_path):
    cfg = small_config(tmp_path, dataset={"train": str(tmp_path / "missing.tsv")})
    assert main(["trueput", "sweep", cfg, "--out", str(tmp_path / "t")]) == 0


def test_decode_single_node_trees(tmp_path):
    out = tmp_path / "d"
    assert main(["decode", "sweep", small_config(tmp_path, decode={"tree_sizes": [1]}), "--out", str(out)]) == 0
    rows = read_rows(out / "sweep.csv")
    assert len(rows) == 1 and 1.0 <= float(rows[0]["speedup"]) <= 2.0


def test_decode_without_learning(tmp_path):
    out = tmp_path / "d"
    assert main(["decode", "learn", small_config(tmp_path, decode={"learn_steps": 0}), "--out", str(out)]) == 0
    assert (out / "learn.csv").read_text().splitlines() == ["update_idx,kl"]


def test_decode_all_and_report(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["decode", cfg, "--out", str(tmp_path / "d")]) == 0
    assert len(read_rows(tmp_path / "d" / "learn.csv")) == 50
    assert len(read_rows(tmp_path / "d" / "sweep.csv")) == 4
    assert main(["trueput", "sweep", cfg, "--out", str(tmp_path / "t")]) == 0
    assert main(["report", str(tmp_path / "d"), str(tmp_path / "t"), "--out", str(tmp_path / "rep")]) == 0
    optima = read_rows(tmp_path / "rep" / "optima.csv")
    assert {r["kind"] for r in optima} == {"decode", "trueput"}


def test_report_without_runs(tmp_path):
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "rep")]) == 2


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("HIERDT_OUT", str(tmp_path / "root"))
    assert main(["trueput", "sweep", small_config(tmp_path)]) == 0
    assert (tmp_path / "root" / "trueput" / "optimal_k.csv").exists()
