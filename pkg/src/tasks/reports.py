from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.data.windows import WindowBatch
from src.errors import EvaluationError
from src.models.glue import ForecastDistribution
from src.tasks.evaluation import MetricsSummary
from src.tasks.scoring import AnomalyReport
from src.utils.plots import plot_forecast_band, plot_score_split, plot_scores

SCORE_COLUMNS = ["timestep", "score", "argmax_sensor", "predicted", "truth"]
TRAIN_SCORE_COLUMNS = ["timestep", "score", "above_threshold"]


def write_scores_csv(report: AnomalyReport, path: Path, sensor_names: Optional[Sequence[str]] = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(report.rows(sensor_names), columns=SCORE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_train_scores_csv(report: AnomalyReport, path: Path) -> Path:
    """Training-split scores the threshold was fitted on."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({
        "timestep": report.train_times,
        "score": report.train_scores,
        "above_threshold": (np.asarray(report.train_scores) > report.threshold).astype(np.int8),
    }, columns=TRAIN_SCORE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_scores_csv(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    """(predicted, truth) columns of a scores file; truth must be present."""
    if not path.exists():
        raise FileNotFoundError(f"scores file not found: {path}")
    frame = pd.read_csv(path)
    missing = {"predicted", "truth"} - set(frame.columns)
    if missing:
        raise EvaluationError(f"{path}: missing column(s) {sorted(missing)}")
    truth = frame["truth"].to_numpy()
    if np.any(truth < 0):
        raise EvaluationError(f"{path}: scores file carries no ground-truth labels")
    return frame["predicted"].to_numpy().astype(np.int8), truth.astype(np.int8)


def write_metrics_json(
    report: AnomalyReport,
    metrics: Optional[MetricsSummary],
    path: Path,
    config_hash: Optional[str] = None,
    header: Optional[Dict[str, Any]] = None,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model": report.model,
        "score_kind": report.score_kind,
        "threshold": report.threshold,
        "anomaly_rate": report.anomaly_rate,
        "n_test": int(len(report.test_scores)),
        "n_flagged": int(report.predicted.sum()),
        "metrics": None if metrics is None else metrics.to_dict(),
        "config_hash": config_hash,
        **(header or {}),
    }
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)
    return path


def summarize(report: AnomalyReport, forecast: Optional[Tuple[float, float]] = None) -> Optional[MetricsSummary]:
    if report.metrics is None:
        return None
    summary = report.metrics
    if forecast is not None:
        summary = summary.with_forecast(*forecast)
    return summary


def save_detection(
    report: AnomalyReport,
    out_dir: Path,
    sensor_names: Sequence[str],
    metrics: Optional[MetricsSummary],
    config_hash: Optional[str] = None,
    header: Optional[Dict[str, Any]] = None,
) -> List[Path]:
    """Test and training scores, metrics.json and the score plots for one model."""
    paths = [
        write_scores_csv(report, out_dir / "scores.csv", sensor_names),
        write_train_scores_csv(report, out_dir / "train_scores.csv"),
        write_metrics_json(report, metrics, out_dir / "metrics.json", config_hash, header),
        plot_scores(report.test_times, report.test_scores, report.threshold, report.truth,
                    out_dir / "score_plot.svg", title=f"{report.model}: anomaly score"),
        plot_score_split(report.train_times, report.train_scores, report.test_times, report.test_scores,
                         report.threshold, out_dir / "train_test_scores.svg",
                         title=f"{report.model}: training vs test score"),
    ]
    return paths


def save_bands(
    forecast: ForecastDistribution,
    windows: WindowBatch,
    sensor_names: Sequence[str],
    out_dir: Path,
) -> List[Path]:
    """One forecast-band plot per sensor; point forecasts have no band and write nothing."""
    if forecast.sigma2 is None:
        return []
    paths = []
    for i, name in enumerate(sensor_names):
        paths.append(plot_forecast_band(
            windows.target_times,
            windows.targets[:, i],
            forecast.mu[:, i],
            forecast.sigma2[:, i],
            windows.target_labels,
            name,
            out_dir / f"band_{name}.svg",
        ))
    return paths
