#!/usr/bin/env python3
"""Test the per-metric series export."""

import sys, os

import pandas as pd
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))
from plot_data import export_plot_data, load_run_csv, metric_columns
from trainer import CSV_COLUMNS
from utils import ConfigError


def write_metrics(path, epochs=(2, 1, 3)):
    rows = []
    for epoch in epochs:
        row = {c: float(epoch) for c in CSV_COLUMNS}
        row["epoch"] = epoch
        row["step_type"] = "constrained"
        rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False)


def test_load_sorts_by_epoch(tmp_path):
    path = tmp_path / "metrics.csv"
    write_metrics(path)
    frame = load_run_csv(str(path))
    assert frame["epoch"].tolist() == [1, 2, 3]
    assert "step_type" not in metric_columns(frame)
    assert "epoch" not in metric_columns(frame)
    assert "mean_return" in metric_columns(frame)


def test_missing_file_or_columns(tmp_path):
    with pytest.raises(ConfigError):
        load_run_csv(str(tmp_path / "absent.csv"))
    bad = tmp_path / "bad.csv"
    pd.DataFrame({"epoch": [1], "mean_return": [0.0]}).to_csv(bad, index=False)
    with pytest.raises(ConfigError):
        load_run_csv(str(bad))


def test_export_writes_one_series_per_metric(tmp_path):
    path = tmp_path / "metrics.csv"
    write_metrics(path)
    written = export_plot_data(str(path), str(tmp_path / "series"))
    assert set(written) == set(CSV_COLUMNS) - {"epoch", "step_type"}
    series = pd.read_csv(written["score"])
    assert list(series.columns) == ["epoch", "value"]
    assert series["value"].tolist() == [1.0, 2.0, 3.0]


def test_export_with_plots(tmp_path):
    pytest.importorskip("matplotlib")
    path = tmp_path / "metrics.csv"
    write_metrics(path)
    export_plot_data(str(path), str(tmp_path / "series"), plot=True)
    assert (tmp_path / "series" / "kl.png").exists()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
