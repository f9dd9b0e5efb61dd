from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.errors import PreprocessError


def _frozen(arr: Optional[np.ndarray], dtype=None) -> Optional[np.ndarray]:
    if arr is None:
        return None
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    # population std (divide by T)
    convention: str = "population"

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", _frozen(self.mean, np.float64))
        object.__setattr__(self, "std", _frozen(self.std, np.float64))

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Preprocessed multivariate series; arrays are read-only after construction."""

    sensor_names: Tuple[str, ...]
    values: np.ndarray
    norm_stats: NormStats
    labels: Optional[np.ndarray] = None
    dropped_sensors: Tuple[str, ...] = ()
    trajectory: Optional[np.ndarray] = None
    kind: str = "generic"
    split_name: str = "all"

    def __post_init__(self) -> None:
        object.__setattr__(self, "sensor_names", tuple(self.sensor_names))
        object.__setattr__(self, "dropped_sensors", tuple(self.dropped_sensors))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int8))
        if self.trajectory is not None:
            object.__setattr__(self, "trajectory", _frozen(np.asarray(self.trajectory).astype(str)))

        if self.values.ndim != 2 or self.values.shape[1] != len(self.sensor_names):
            raise PreprocessError(
                f"values shape {self.values.shape} does not match {len(self.sensor_names)} sensor names"
            )
        if not np.all(np.isfinite(self.values)):
            raise PreprocessError("dataset values contain NaN or Inf")
        if self.labels is not None and len(self.labels) != len(self.values):
            raise PreprocessError(f"labels have length {len(self.labels)}, expected {len(self.values)}")
        if self.trajectory is not None and len(self.trajectory) != len(self.values):
            raise PreprocessError("trajectory ids do not match the number of rows")

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_names)

    @property
    def n_rows(self) -> int:
        return len(self.values)

    def rows(self, start: int, stop: int, split_name: Optional[str] = None) -> "TimeSeriesDataset":
        return replace(
            self,
            values=self.values[start:stop],
            labels=None if self.labels is None else self.labels[start:stop],
            trajectory=None if self.trajectory is None else self.trajectory[start:stop],
            split_name=split_name or self.split_name,
        )


@dataclass
class PreparedData:
    train: TimeSeriesDataset
    test: TimeSeriesDataset
    window: int = 5
    anomaly_rate: Optional[float] = None
    candidates: Optional[Dict[str, List[str]]] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def sensor_names(self) -> Tuple[str, ...]:
        return self.train.sensor_names


def save_datasets(data: PreparedData, out_dir: Path) -> Path:
    """Persist both splits as .npy arrays plus a meta.json sidecar."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for split in (data.train, data.test):
        np.save(out_dir / f"{split.split_name}_values.npy", np.ascontiguousarray(split.values))
        if split.labels is not None:
            np.save(out_dir / f"{split.split_name}_labels.npy", np.ascontiguousarray(split.labels))
        if split.trajectory is not None:
            np.save(out_dir / f"{split.split_name}_trajectory.npy", np.asarray(split.trajectory).astype(str))
    stats = data.train.norm_stats
    np.save(out_dir / "norm_mean.npy", np.ascontiguousarray(stats.mean))
    np.save(out_dir / "norm_std.npy", np.ascontiguousarray(stats.std))

    meta = {
        "sensor_names": list(data.train.sensor_names),
        "dropped_sensors": list(data.train.dropped_sensors),
        "kind": data.train.kind,
        "std_convention": stats.convention,
        "window": data.window,
        "anomaly_rate": data.anomaly_rate,
        "candidates": data.candidates,
        "splits": {
            s.split_name: {"rows": s.n_rows, "labels": s.labels is not None, "trajectory": s.trajectory is not None}
            for s in (data.train, data.test)
        },
        **data.meta,
    }
    meta_path = out_dir / "meta.json"
    with meta_path.open("w", encoding="utf-8") as f:
        json.dump(meta, f, ensure_ascii=False, indent=2, sort_keys=True)
    return meta_path


def load_datasets(dataset_dir: Path) -> PreparedData:
    meta_path = dataset_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no preprocessed dataset at {dataset_dir} (meta.json missing)")
    with meta_path.open("r", encoding="utf-8") as f:
        meta = json.load(f)
    stats = NormStats(
        np.load(dataset_dir / "norm_mean.npy"),
        np.load(dataset_dir / "norm_std.npy"),
        meta.get("std_convention", "population"),
    )

    def _split(name: str) -> TimeSeriesDataset:
        info = meta["splits"][name]
        return TimeSeriesDataset(
            sensor_names=meta["sensor_names"],
            values=np.load(dataset_dir / f"{name}_values.npy"),
            norm_stats=stats,
            labels=np.load(dataset_dir / f"{name}_labels.npy") if info["labels"] else None,
            dropped_sensors=meta["dropped_sensors"],
            trajectory=np.load(dataset_dir / f"{name}_trajectory.npy") if info["trajectory"] else None,
            kind=meta["kind"],
            split_name=name,
        )

    known = {"sensor_names", "dropped_sensors", "kind", "std_convention", "window", "anomaly_rate", "candidates", "splits"}
    return PreparedData(
        train=_split("train"),
        test=_split("test"),
        window=int(meta["window"]),
        anomaly_rate=meta.get("anomaly_rate"),
        candidates=meta.get("candidates"),
        meta={k: v for k, v in meta.items() if k not in known},
    )
