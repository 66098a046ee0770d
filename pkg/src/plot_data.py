"""Reshape a training metrics CSV into one (epoch, value) series file per metric."""

import logging
import os
from typing import Dict, List

import pandas as pd

from trainer import CSV_COLUMNS
from utils import ConfigError, ensure_results_dir

logger = logging.getLogger(__name__)


def load_run_csv(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ConfigError(f"metrics file {path} does not exist")
    frame = pd.read_csv(path)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f"{path} is missing columns {missing}")
    return frame.sort_values("epoch").reset_index(drop=True)


def metric_columns(frame: pd.DataFrame) -> List[str]:
    numeric = frame.select_dtypes(include="number").columns
    return [c for c in numeric if c != "epoch"]


def export_plot_data(csv_path: str, out_dir: str, plot: bool = False) -> Dict[str, str]:
    """Write `<metric>.csv` per numeric column (and `<metric>.png` with plot); returns metric -> path."""
    frame = load_run_csv(csv_path)
    out_dir = ensure_results_dir(out_dir)
    written = {}
    for metric in metric_columns(frame):
        series = frame[["epoch", metric]].rename(columns={metric: "value"})
        path = os.path.join(out_dir, f"{metric}.csv")
        series.to_csv(path, index=False)
        written[metric] = path
        if plot:
            _plot_series(series, metric, os.path.join(out_dir, f"{metric}.png"))
    logger.info(f"Exported {len(written)} series from {csv_path} to {out_dir}")
    return written


def _plot_series(series: pd.DataFrame, metric: str, path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(series["epoch"], series["value"], linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
