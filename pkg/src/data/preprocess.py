from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.data.dataset import NormStats, PreparedData, TimeSeriesDataset
from src.data.loader import DatasetManifest, RawTable, concat_tables, load_csv
from src.errors import PreprocessError
from src.utils.console import get_logger

logger = get_logger(__name__)


def _as_range(train_range: slice | Tuple[int, int], n_rows: int) -> slice:
    if isinstance(train_range, tuple):
        train_range = slice(*train_range)
    start, stop, _ = train_range.indices(n_rows)
    if stop <= start:
        raise PreprocessError("train_range is empty")
    return slice(start, stop)


def fill_missing(raw: RawTable) -> RawTable:
    """Forward-fill, then back-fill, then zero-fill each sensor (per trajectory when present)."""
    frame = raw.frame
    if raw.trajectory is not None:
        groups = pd.Series(raw.trajectory, index=frame.index)
        filled = frame.groupby(groups, sort=False).transform(lambda col: col.ffill().bfill())
    else:
        filled = frame.ffill().bfill()
    filled = filled.fillna(0.0)
    return raw.replace_frame(filled[frame.columns].astype(np.float64))


def downsample_median(raw: RawTable, window_seconds: int = 10) -> RawTable:
    """Reduce non-overlapping blocks of `window_seconds` rows to their per-sensor median.

    The trailing partial block is kept and reduced the same way, so the
    result has ceil(T / window_seconds) rows. A block is labelled anomalous
    if any of its rows is.
    """
    if window_seconds < 1:
        raise PreprocessError("window_seconds must be >= 1")
    n = raw.n_rows
    block = np.arange(n) // window_seconds
    frame = raw.frame.groupby(block, sort=True).median().reset_index(drop=True)
    firsts = np.arange(0, n, window_seconds)

    labels = None
    if raw.labels is not None:
        labels = pd.Series(raw.labels).groupby(block, sort=True).max().to_numpy().astype(np.int8)
    time = None if raw.time is None else raw.time[firsts]
    trajectory = None if raw.trajectory is None else raw.trajectory[firsts]
    return RawTable(frame=frame, time=time, labels=labels, trajectory=trajectory, source=raw.source)


def drop_zero_variance(raw: RawTable, train_range: slice | Tuple[int, int]) -> Tuple[RawTable, List[str]]:
    rows = _as_range(train_range, raw.n_rows)
    train = raw.frame.iloc[rows]
    # exact zero variance: every training value identical
    constant = (train.max(axis=0) == train.min(axis=0)).to_numpy()
    dropped = [name for name, flag in zip(raw.sensor_names, constant) if flag]
    if len(dropped) == raw.frame.shape[1]:
        raise PreprocessError("every sensor has zero variance on the training split")
    if dropped:
        logger.info("dropping %d zero-variance sensor(s): %s", len(dropped), ", ".join(dropped))
    kept = [c for c, flag in zip(raw.frame.columns, constant) if not flag]
    return raw.replace_frame(raw.frame[kept]), dropped


def normalize(
    raw: RawTable,
    train_range: slice | Tuple[int, int],
    dropped_sensors: Sequence[str] = (),
    kind: str = "generic",
) -> TimeSeriesDataset:
    rows = _as_range(train_range, raw.n_rows)
    values = raw.frame.to_numpy(dtype=np.float64)
    train = values[rows]
    mean = train.mean(axis=0)
    std = train.std(axis=0, ddof=0)
    zero = np.flatnonzero(std == 0)
    if zero.size:
        names = [raw.sensor_names[i] for i in zero]
        raise PreprocessError(f"zero standard deviation for sensor(s) {names}; run variance filtering first")
    stats = NormStats(mean, std)
    return TimeSeriesDataset(
        sensor_names=raw.sensor_names,
        values=stats.apply(values),
        norm_stats=stats,
        labels=raw.labels,
        dropped_sensors=dropped_sensors,
        trajectory=raw.trajectory,
        kind=kind,
    )


def preprocess(manifest: DatasetManifest) -> PreparedData:
    """Run fill, (WADI) downsample, variance filter and normalize on both splits."""
    tables = []
    for path in (manifest.train_path, manifest.test_path):
        table = load_csv(path, manifest.schema_for(path))
        logger.info("loaded %s: %d rows, %d sensors, %d missing cells", path.name, table.n_rows,
                    len(table.sensor_names), table.n_missing)
        table = fill_missing(table)
        if manifest.kind == "wadi":
            table = downsample_median(table, manifest.downsample_seconds)
        tables.append(table)
    train_raw, test_raw = tables
    if train_raw.sensor_names != test_raw.sensor_names:
        raise PreprocessError(
            f"train and test files declare different sensors: {train_raw.sensor_names} vs {test_raw.sensor_names}"
        )
    if train_raw.n_rows == 0:
        raise PreprocessError(f"training file {manifest.train_path} has no rows")

    combined = concat_tables([train_raw, test_raw])
    n_train = train_raw.n_rows
    combined, dropped = drop_zero_variance(combined, (0, n_train))
    full = normalize(combined, (0, n_train), dropped, kind=manifest.kind)

    candidates = None
    if manifest.candidates_path is not None:
        from src.models.graph import read_candidates

        candidates = read_candidates(manifest.candidates_path, list(full.sensor_names))

    anomaly_rate: Optional[float] = manifest.anomaly_rate
    return PreparedData(
        train=full.rows(0, n_train, "train"),
        test=full.rows(n_train, full.n_rows, "test"),
        window=manifest.window,
        anomaly_rate=anomaly_rate,
        candidates=candidates,
        meta={"dataset": manifest.dataset_name},
    )
