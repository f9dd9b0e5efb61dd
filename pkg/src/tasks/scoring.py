from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.errors import ScoringError
from src.tasks.evaluation import MetricsSummary, prf1

IQR_FLOOR = 1e-6


@dataclass(frozen=True)
class RobustStats:
    median: np.ndarray
    iqr: np.ndarray


def robust_stats(train_abs_errors: np.ndarray, iqr_floor: float = IQR_FLOOR) -> RobustStats:
    """Per-sensor median and interquartile range (linear interpolation) of training errors."""
    errors = np.asarray(train_abs_errors, dtype=np.float64)
    if errors.size == 0:
        raise ScoringError("robust_stats needs a non-empty error matrix")
    if errors.ndim == 1:
        errors = errors[:, None]
    if errors.shape[0] < 4:
        raise ScoringError(f"robust_stats needs at least 4 timesteps, got {errors.shape[0]}")
    q1, median, q3 = np.quantile(errors, [0.25, 0.5, 0.75], axis=0, method="linear")
    return RobustStats(median=median, iqr=np.maximum(q3 - q1, iqr_floor))


def mre_series(abs_errors: np.ndarray, stats: RobustStats) -> Tuple[np.ndarray, np.ndarray]:
    """Max robust error per timestep and the sensor attaining it (first index on ties)."""
    robust = (np.asarray(abs_errors, dtype=np.float64) - stats.median) / stats.iqr
    return robust.max(axis=1), robust.argmax(axis=1)


def mre(abs_errors_t: np.ndarray, stats: RobustStats) -> Tuple[float, int]:
    scores, arg = mre_series(np.atleast_2d(abs_errors_t), stats)
    return float(scores[0]), int(arg[0])


def fit_threshold(train_scores: np.ndarray, anomaly_rate: float) -> float:
    """The (1 - rate) quantile of the training scores, linear interpolation."""
    scores = np.asarray(train_scores, dtype=np.float64)
    if scores.size == 0:
        raise ScoringError("cannot fit a threshold on zero training scores")
    if not 0.0 < anomaly_rate < 1.0:
        raise ScoringError(f"anomaly rate must lie in (0, 1), got {anomaly_rate}")
    return float(np.quantile(scores, 1.0 - anomaly_rate, method="linear"))


def detect(scores: np.ndarray, threshold: float) -> np.ndarray:
    if not np.isfinite(threshold):
        raise ScoringError(f"threshold must be finite, got {threshold}")
    return (np.asarray(scores) > threshold).astype(np.int8)


def resolve_anomaly_rate(configured: Optional[float], train_labels: Optional[np.ndarray]) -> float:
    """Configured rate, else the training label rate when it is strictly between 0 and 1."""
    if configured is not None:
        return float(configured)
    if train_labels is not None and len(train_labels):
        rate = float(np.mean(train_labels))
        if 0.0 < rate < 1.0:
            return rate
    raise ScoringError(
        "no anomaly rate: set SCORING_ANOMALY_RATE (or ANOMALY_RATE in the manifest) "
        "when the training split has no usable labels"
    )


@dataclass
class AnomalyReport:
    model: str
    train_scores: np.ndarray
    test_scores: np.ndarray
    threshold: float
    predicted: np.ndarray
    test_times: np.ndarray
    truth: Optional[np.ndarray] = None
    argmax_sensor: Optional[np.ndarray] = None
    anomaly_rate: float = 0.0
    score_kind: str = "max-robust-error"
    train_times: Optional[np.ndarray] = None
    # detection P/R/F1 against `truth`; None when the test split is unlabelled
    metrics: Optional[MetricsSummary] = None

    def __post_init__(self) -> None:
        if len(self.predicted) != len(self.test_scores):
            raise ScoringError("predicted labels and scores differ in length")
        if self.train_times is None:
            self.train_times = np.arange(len(self.train_scores))
        elif len(self.train_times) != len(self.train_scores):
            raise ScoringError("training times and scores differ in length")

    def rows(self, sensor_names: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
        """Columns of the per-timestep scores file."""
        arg = self.argmax_sensor
        if arg is not None and sensor_names is not None:
            arg = np.asarray([sensor_names[i] for i in arg], dtype=object)
        n = len(self.test_scores)
        return {
            "timestep": self.test_times,
            "score": self.test_scores,
            "argmax_sensor": arg if arg is not None else np.full(n, ""),
            "predicted": self.predicted,
            "truth": self.truth if self.truth is not None else np.full(n, -1),
        }


def _finalize(model: str, train_scores: np.ndarray, test_scores: np.ndarray, test_times: np.ndarray,
              anomaly_rate: float, truth: Optional[np.ndarray], argmax: Optional[np.ndarray],
              score_kind: str, train_times: Optional[np.ndarray] = None) -> AnomalyReport:
    tau = fit_threshold(train_scores, anomaly_rate)
    predicted = detect(test_scores, tau)
    truth = None if truth is None else np.asarray(truth, dtype=np.int8)
    return AnomalyReport(
        model=model,
        train_scores=train_scores,
        test_scores=test_scores,
        threshold=tau,
        predicted=predicted,
        test_times=np.asarray(test_times),
        truth=truth,
        argmax_sensor=argmax,
        anomaly_rate=anomaly_rate,
        score_kind=score_kind,
        train_times=None if train_times is None else np.asarray(train_times),
        metrics=None if truth is None else prf1(predicted, truth),
    )


def score_forecasts(
    model: str,
    train_pred: np.ndarray,
    train_true: np.ndarray,
    test_pred: np.ndarray,
    test_true: np.ndarray,
    test_times: np.ndarray,
    anomaly_rate: float,
    truth: Optional[np.ndarray] = None,
    iqr_floor: float = IQR_FLOOR,
    train_times: Optional[np.ndarray] = None,
) -> AnomalyReport:
    """Forecasting models: standardize absolute errors with training stats and take the max."""
    if len(test_true) == 0:
        raise ScoringError("test split has no windows to score")
    stats = robust_stats(np.abs(train_true - train_pred), iqr_floor)
    train_scores, _ = mre_series(np.abs(train_true - train_pred), stats)
    test_scores, argmax = mre_series(np.abs(test_true - test_pred), stats)
    return _finalize(model, train_scores, test_scores, test_times, anomaly_rate, truth, argmax, "max-robust-error",
                     train_times)


def score_raw(
    model: str,
    train_scores: np.ndarray,
    test_scores: np.ndarray,
    test_times: np.ndarray,
    anomaly_rate: float,
    truth: Optional[np.ndarray] = None,
    score_kind: str = "reconstruction-error",
    train_times: Optional[np.ndarray] = None,
) -> AnomalyReport:
    """Score-producing baselines: threshold the raw scores directly."""
    if len(test_scores) == 0:
        raise ScoringError("test split has no windows to score")
    return _finalize(model, np.asarray(train_scores, dtype=np.float64), np.asarray(test_scores, dtype=np.float64),
                     test_times, anomaly_rate, truth, None, score_kind, train_times)
