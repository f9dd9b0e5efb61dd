from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.data.dataset import TimeSeriesDataset
from src.errors import WindowError


@dataclass(frozen=True)
class WindowBatch:
    """History/target pairs: inputs (B, N, w), targets (B, N)."""

    inputs: np.ndarray
    targets: np.ndarray
    target_times: np.ndarray
    target_labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def n_sensors(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def window(self) -> int:
        return int(self.inputs.shape[2])

    def take(self, index: np.ndarray) -> "WindowBatch":
        return WindowBatch(
            inputs=self.inputs[index],
            targets=self.targets[index],
            target_times=self.target_times[index],
            target_labels=None if self.target_labels is None else self.target_labels[index],
        )

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator["WindowBatch"]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield self.take(order[start:start + batch_size])


def _segments(dataset: TimeSeriesDataset) -> List[np.ndarray]:
    """Row-index ranges of contiguous trajectories (one segment when there are none)."""
    n = dataset.n_rows
    if dataset.trajectory is None or n == 0:
        return [np.arange(n)]
    traj = np.asarray(dataset.trajectory)
    cuts = np.flatnonzero(traj[1:] != traj[:-1]) + 1
    return np.split(np.arange(n), cuts)


def make_windows(dataset: TimeSeriesDataset, w: int = 5, stride: int = 1) -> WindowBatch:
    """Every (values[t-w:t], values[t]) pair that stays inside one trajectory.

    Raises:
        WindowError: w or stride below 1, or a trajectory with no more than w rows.
    """
    if w < 1 or stride < 1:
        raise WindowError(f"window ({w}) and stride ({stride}) must be >= 1")

    inputs, targets, times = [], [], []
    for rows in _segments(dataset):
        if len(rows) <= w:
            raise WindowError(f"series segment of length {len(rows)} is too short for window {w}")
        seg = dataset.values[rows[0]:rows[-1] + 1]
        # (T-w+1, N, w) views; the last one has no target
        views = sliding_window_view(seg, w, axis=0)[:-1][::stride]
        target_idx = np.arange(w, len(rows))[::stride]
        inputs.append(views)
        targets.append(seg[target_idx])
        times.append(rows[0] + target_idx)

    target_times = np.concatenate(times).astype(np.int64)
    labels = None if dataset.labels is None else np.asarray(dataset.labels[target_times], dtype=np.int8)
    return WindowBatch(
        inputs=np.ascontiguousarray(np.concatenate(inputs), dtype=np.float64),
        targets=np.ascontiguousarray(np.concatenate(targets), dtype=np.float64),
        target_times=target_times,
        target_labels=labels,
    )
