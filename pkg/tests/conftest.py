from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import pytest

from src.data.dataset import NormStats, TimeSeriesDataset
from src.data.synthetic import make_synthetic, write_synthetic


def _dataset(values, labels=None, trajectory=None, names=None, kind="generic", split_name="train") -> TimeSeriesDataset:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[1]
    return TimeSeriesDataset(
        sensor_names=names or [f"s{i}" for i in range(n)],
        values=values,
        norm_stats=NormStats(np.zeros(n), np.ones(n)),
        labels=None if labels is None else np.asarray(labels),
        trajectory=trajectory,
        kind=kind,
        split_name=split_name,
    )


@pytest.fixture
def make_dataset():
    return _dataset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def sinusoid_dataset() -> TimeSeriesDataset:
    """Three sensors with lagged linear cross-dependencies and light noise."""
    gen = np.random.default_rng(7)
    t = np.arange(400)
    s0 = np.sin(2 * np.pi * t / 25.0)
    s1 = np.zeros_like(s0)
    s2 = np.zeros_like(s0)
    s1[1:] = 0.8 * s0[:-1]
    s2[1:] = -0.7 * s1[:-1]
    values = np.stack([s0, s1, s2], axis=1) + gen.normal(0.0, 0.05, size=(400, 3))
    return _dataset(values)


@pytest.fixture
def synthetic_manifest(tmp_path: Path) -> Path:
    series = make_synthetic(n_sensors=5, n_train=240, n_test=120, anomaly_rate=0.05, seed=3)
    return write_synthetic(series, tmp_path / "synth", anomaly_rate=0.05)


def write_config(path: Path, out_dir: Path, manifest: Optional[Path] = None, **extra: str) -> Path:
    lines = [f"RUN_OUT_DIR={out_dir}"]
    if manifest is not None:
        lines.append(f"DATA_MANIFEST={manifest}")
    lines += [f"{k}={v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def config_writer():
    return write_config
