from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table
from sklearn.metrics import confusion_matrix, mean_absolute_error, mean_squared_error

from src.errors import EvaluationError


@dataclass(frozen=True)
class MetricsSummary:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    mse: Optional[float] = None
    mae: Optional[float] = None

    @property
    def counts(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}

    def with_forecast(self, mse: float, mae: float) -> "MetricsSummary":
        return MetricsSummary(self.precision, self.recall, self.f1, self.tp, self.fp, self.fn, self.tn, mse, mae)

    def to_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)


def prf1(predicted: Sequence[int], truth: Sequence[int]) -> MetricsSummary:
    """Pointwise precision/recall/F1; every zero-denominator case yields 0."""
    predicted = np.asarray(predicted).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    if predicted.shape != truth.shape:
        raise EvaluationError(f"length mismatch: {len(predicted)} predictions vs {len(truth)} labels")
    if predicted.size == 0:
        return MetricsSummary(0.0, 0.0, 0.0, 0, 0, 0, 0)
    tn, fp, fn, tp = (int(c) for c in confusion_matrix(truth, predicted, labels=[0, 1]).ravel())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsSummary(precision, recall, f1, tp, fp, fn, tn)


def forecast_metrics(pred: np.ndarray, truth: np.ndarray) -> Tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise EvaluationError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    flat_p, flat_t = pred.reshape(-1, 1), truth.reshape(-1, 1)
    return float(mean_squared_error(flat_t, flat_p)), float(mean_absolute_error(flat_t, flat_p))


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_table(runs: Sequence[Tuple[str, MetricsSummary]], title: str = "Anomaly detection results") -> Table:
    table = Table(title=title)
    for column in ("Model", "Precision", "Recall", "F1", "MSE", "MAE", "TP", "FP", "FN", "TN"):
        table.add_column(column, justify="left" if column == "Model" else "right")
    for name, m in runs:
        table.add_row(name, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1), _fmt(m.mse), _fmt(m.mae),
                      str(m.tp), str(m.fp), str(m.fn), str(m.tn))
    return table


def make_report(
    runs: Sequence[Tuple[str, MetricsSummary]],
    out_dir: Path,
    config_hash: Optional[str] = None,
    extra: Optional[Dict[str, Dict]] = None,
) -> Tuple[Path, Path]:
    """Write report.json (one record per model) and report.txt (aligned table)."""
    if not runs:
        raise EvaluationError("make_report needs at least one run")
    out_dir.mkdir(parents=True, exist_ok=True)
    records: List[Dict] = []
    for name, m in runs:
        record = {"model": name, **m.to_dict(), "config_hash": config_hash}
        if extra and name in extra:
            record.update(extra[name])
        records.append(record)

    json_path = out_dir / "report.json"
    with json_path.open("w", encoding="utf-8") as f:
        json.dump({"config_hash": config_hash, "runs": records}, f, ensure_ascii=False, indent=2)

    recorder = Console(record=True, width=120, file=io.StringIO())
    recorder.print(render_table(runs))
    text_path = out_dir / "report.txt"
    text_path.write_text(recorder.export_text(), encoding="utf-8")
    return json_path, text_path
