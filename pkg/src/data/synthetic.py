"""Synthetic sensor data with known cross-sensor dependencies and planted anomalies.

Sensors 0 and 1 are sinusoidal drivers; every other sensor is a lagged
linear function of one or two earlier sensors plus Gaussian noise. The
planted dependency edges are returned so graph recovery can be checked.

Run ``python -m src.data.synthetic OUT_DIR`` to write train/test CSVs and a
manifest next to them.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

# child -> [(parent, lag, coefficient)]
DEFAULT_PARENTS: Dict[int, List[Tuple[int, int, float]]] = {
    2: [(0, 1, 0.9)],
    3: [(1, 1, 0.6), (0, 2, 0.4)],
    4: [(2, 1, 0.9)],
}
# robust sigma of a normal sample: IQR / 1.349
IQR_TO_SIGMA = 1.349


@dataclass
class SyntheticSeries:
    train: pd.DataFrame
    test: pd.DataFrame
    train_labels: np.ndarray
    test_labels: np.ndarray
    # (src, dst): src's history drives dst
    edges: List[Tuple[int, int]] = field(default_factory=list)
    noise_var: float = 0.01

    @property
    def sensor_names(self) -> List[str]:
        return list(self.train.columns)


def _parents(n_sensors: int) -> Dict[int, List[Tuple[int, int, float]]]:
    parents = {i: p for i, p in DEFAULT_PARENTS.items() if i < n_sensors}
    for i in range(5, n_sensors):
        parents[i] = [(i - 2, 1, 0.9)]
    return parents


def _simulate(n_rows: int, n_sensors: int, noise_std: float, rng: np.random.Generator, offset: int) -> np.ndarray:
    burn = 8
    total = n_rows + burn
    t = np.arange(total) + offset
    x = np.zeros((total, n_sensors))
    x[:, 0] = np.sin(2 * np.pi * t / 50.0)
    if n_sensors > 1:
        x[:, 1] = np.cos(2 * np.pi * t / 37.0)
    x[:, : min(2, n_sensors)] += rng.normal(0.0, noise_std, size=(total, min(2, n_sensors)))
    parents = _parents(n_sensors)
    for i in range(2, n_sensors):
        noise = rng.normal(0.0, noise_std, size=total)
        for step in range(total):
            acc = noise[step]
            for parent, lag, coef in parents[i]:
                if step - lag >= 0:
                    acc += coef * x[step - lag, parent]
            x[step, i] = acc
    return x[burn:]


def _plant_level_shifts(
    values: np.ndarray, rate: float, magnitude: float, rng: np.random.Generator
) -> np.ndarray:
    """Add level-shift segments covering roughly `rate` of the rows; returns the labels."""
    n_rows, n_sensors = values.shape
    labels = np.zeros(n_rows, dtype=np.int8)
    q75, q25 = np.percentile(values, [75, 25], axis=0)
    robust_sigma = (q75 - q25) / IQR_TO_SIGMA
    target = int(round(rate * n_rows))
    # keep the first rows clean so every window history starts normal
    lo = 10
    attempts = 0
    while labels.sum() < target and attempts < 100 * n_rows:
        attempts += 1
        length = int(rng.integers(4, 11))
        start = int(rng.integers(lo, max(lo + 1, n_rows - length)))
        if labels[max(0, start - 6):start + length + 6].any():
            continue
        sensor = int(rng.integers(0, n_sensors))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        values[start:start + length, sensor] += sign * magnitude * robust_sigma[sensor]
        labels[start:start + length] = 1
    return labels


def make_synthetic(
    n_sensors: int = 5,
    n_train: int = 2000,
    n_test: int = 1000,
    noise_var: float = 0.01,
    anomaly_rate: float = 0.05,
    shift_sigmas: float = 6.0,
    seed: int = 0,
    plant_in_train: bool = True,
) -> SyntheticSeries:
    if n_sensors < 2:
        raise ValueError("need at least 2 sensors")
    rng = np.random.default_rng(seed)
    noise_std = float(np.sqrt(noise_var))
    train = _simulate(n_train, n_sensors, noise_std, rng, offset=0)
    test = _simulate(n_test, n_sensors, noise_std, rng, offset=n_train)

    if anomaly_rate > 0 and plant_in_train:
        train_labels = _plant_level_shifts(train, anomaly_rate, shift_sigmas, rng)
    else:
        train_labels = np.zeros(n_train, dtype=np.int8)
    if anomaly_rate > 0:
        test_labels = _plant_level_shifts(test, anomaly_rate, shift_sigmas, rng)
    else:
        test_labels = np.zeros(n_test, dtype=np.int8)

    names = [f"s{i}" for i in range(n_sensors)]
    edges = sorted((p, child) for child, ps in _parents(n_sensors).items() for p, _, _ in ps)
    return SyntheticSeries(
        train=pd.DataFrame(train, columns=names),
        test=pd.DataFrame(test, columns=names),
        train_labels=train_labels,
        test_labels=test_labels,
        edges=edges,
        noise_var=noise_var,
    )


def write_synthetic(series: SyntheticSeries, out_dir: Path, window: int = 5, anomaly_rate: Optional[float] = None) -> Path:
    """Write train.csv, test.csv, edges.csv and manifest.env; returns the manifest path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, frame, labels in (
        ("train", series.train, series.train_labels),
        ("test", series.test, series.test_labels),
    ):
        out = frame.copy()
        out.insert(0, "timestamp", np.arange(len(frame)))
        out["label"] = labels
        out.to_csv(out_dir / f"{name}.csv", index=False, float_format="%.10g")

    names = series.sensor_names
    pd.DataFrame(
        [(names[s], names[d]) for s, d in series.edges], columns=["src", "dst"]
    ).to_csv(out_dir / "edges.csv", index=False)

    lines = [
        "TRAIN_PATH=train.csv",
        "TEST_PATH=test.csv",
        "KIND=generic",
        f"WINDOW={window}",
        "TIME_COLUMN=timestamp",
        "LABEL_COLUMN=label",
    ]
    if anomaly_rate is not None:
        lines.append(f"ANOMALY_RATE={anomaly_rate}")
    manifest = out_dir / "manifest.env"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def main(argv: Optional[List[str]] = None) -> None:
    parser = argparse.ArgumentParser(description="Write a synthetic sensor dataset with planted anomalies")
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--sensors", type=int, default=5)
    parser.add_argument("--train-rows", type=int, default=2000)
    parser.add_argument("--test-rows", type=int, default=1000)
    parser.add_argument("--noise-var", type=float, default=0.01)
    parser.add_argument("--anomaly-rate", type=float, default=0.05)
    parser.add_argument("--shift-sigmas", type=float, default=6.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    series = make_synthetic(
        n_sensors=args.sensors,
        n_train=args.train_rows,
        n_test=args.test_rows,
        noise_var=args.noise_var,
        anomaly_rate=args.anomaly_rate,
        shift_sigmas=args.shift_sigmas,
        seed=args.seed,
    )
    manifest = write_synthetic(series, args.out_dir, anomaly_rate=args.anomaly_rate)
    print(f"[synthetic] wrote {manifest}")


if __name__ == "__main__":
    main()
