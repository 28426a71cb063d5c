"""Tests for the run browser's file helpers."""

import json

import pandas as pd
import pytest

from app import list_runs, load_manifest, load_report, load_table, summarize_runs
from config import ExperimentConfig, SynthSource
from disagg import build_manifest, write_json


@pytest.fixture
def runs_root(tmp_path):
    root = tmp_path / "runs"
    config = ExperimentConfig(synth=SynthSource(seed=2))
    write_json(build_manifest(config), root / "b_run" / "manifest.json")
    write_json(build_manifest(config), root / "a_run" / "manifest.json")
    (root / "broken").mkdir()
    (root / "broken" / "manifest.json").write_text("{oops", encoding="utf-8")
    (root / "not_a_run").mkdir()
    return root


def test_list_runs_sorted(runs_root):
    assert [p.name for p in list_runs(runs_root)] == ["a_run", "b_run", "broken"]


def test_list_runs_missing_root(tmp_path):
    assert list_runs(tmp_path / "absent") == []


def test_load_manifest(runs_root):
    assert load_manifest(runs_root / "a_run")["kind"] == "run_manifest"
    assert load_manifest(runs_root / "broken") is None


def test_summarize_runs(runs_root):
    table = summarize_runs(runs_root)
    assert table["run"].tolist() == ["a_run", "b_run", "broken"]
    assert table["status"].tolist() == ["ok", "ok", "unreadable"]
    assert table.loc[0, "model"] == "mlcddl"
    assert table.loc[0, "layers"] == "120-80-50"
    assert len(table.loc[0, "config hash"]) == 12


def test_load_table(tmp_path):
    path = tmp_path / "trace.csv"
    pd.DataFrame({"iteration": [0, 1], "objective": [2.0, 1.0]}).to_csv(path, index=False)
    assert load_table(path)["objective"].tolist() == [2.0, 1.0]
    assert load_table(tmp_path / "absent.csv") is None
    (tmp_path / "empty.csv").write_text("")
    assert load_table(tmp_path / "empty.csv") is None


def test_load_report(runs_root):
    run = runs_root / "a_run"
    assert load_report(run) is None
    write_json({"macro_f1": 0.75}, run / "eval" / "report.json")
    assert load_report(run) == {"macro_f1": 0.75}
    (run / "eval" / "report.json").write_text("not json")
    assert load_report(run) is None
