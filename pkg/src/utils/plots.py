from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

# fixed ids and no timestamp so identical data gives identical SVG bytes
matplotlib.rcParams["svg.hashsalt"] = "glue"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save(fig, path: Path, data: pd.DataFrame) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    data.to_csv(path.with_suffix(".csv"), index=False, float_format="%.17g")
    return path


def _shade(ax, times: np.ndarray, labels: Optional[np.ndarray]) -> None:
    if labels is None or not np.any(labels):
        return
    flags = np.asarray(labels).astype(bool)
    edges = np.diff(np.concatenate([[0], flags.astype(int), [0]]))
    for start, stop in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        ax.axvspan(times[start], times[stop - 1], color="tab:red", alpha=0.15, lw=0)


def plot_loss_curve(losses: Sequence[float], path: Path, title: str = "Training loss") -> Path:
    epochs = np.arange(1, len(losses) + 1)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path, pd.DataFrame({"epoch": epochs, "loss": losses}))


def plot_scores(
    times: np.ndarray,
    scores: np.ndarray,
    threshold: float,
    truth: Optional[np.ndarray],
    path: Path,
    title: str = "Anomaly score",
) -> Path:
    """Score over time with the threshold line; true anomalies drawn in red."""
    fig, ax = plt.subplots(figsize=(10, 3.5))
    ax.plot(times, scores, lw=0.8, color="tab:blue", label="score")
    if truth is not None:
        hit = np.asarray(truth).astype(bool)
        ax.scatter(times[hit], scores[hit], s=6, color="tab:red", label="true anomaly", zorder=3)
    ax.axhline(threshold, color="black", ls="--", lw=1, label=f"threshold {threshold:.3g}")
    ax.set_xlabel("timestep")
    ax.set_ylabel("score")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    data = pd.DataFrame({
        "timestep": times,
        "score": scores,
        "threshold": threshold,
        "truth": truth if truth is not None else -1,
    })
    return _save(fig, path, data)


def plot_score_split(
    train_times: np.ndarray,
    train_scores: np.ndarray,
    test_times: np.ndarray,
    test_scores: np.ndarray,
    threshold: float,
    path: Path,
    title: str = "Training vs test score",
) -> Path:
    """Training and test scores on a shared y axis, with the threshold fitted on the former."""
    fig, (ax_train, ax_test) = plt.subplots(1, 2, figsize=(12, 3.5), sharey=True)
    ax_train.plot(train_times, train_scores, lw=0.8, color="tab:gray")
    ax_train.set_title("training")
    ax_test.plot(test_times, test_scores, lw=0.8, color="tab:blue")
    ax_test.set_title("test")
    for ax in (ax_train, ax_test):
        ax.axhline(threshold, color="black", ls="--", lw=1)
        ax.set_xlabel("timestep")
    ax_train.set_ylabel("score")
    fig.suptitle(f"{title} (threshold {threshold:.3g})")
    fig.tight_layout()
    data = pd.DataFrame({
        "split": ["train"] * len(train_scores) + ["test"] * len(test_scores),
        "timestep": np.concatenate([np.asarray(train_times), np.asarray(test_times)]),
        "score": np.concatenate([np.asarray(train_scores), np.asarray(test_scores)]),
        "threshold": threshold,
    })
    return _save(fig, path, data)


def plot_forecast_band(
    times: np.ndarray,
    actual: np.ndarray,
    mu: np.ndarray,
    sigma2: np.ndarray,
    labels: Optional[np.ndarray],
    sensor: str,
    path: Path,
    z: float = 1.96,
) -> Path:
    lower = mu - z * np.sqrt(sigma2)
    upper = mu + z * np.sqrt(sigma2)
    fig, ax = plt.subplots(figsize=(10, 3.5))
    _shade(ax, times, labels)
    ax.fill_between(times, lower, upper, color="tab:orange", alpha=0.3, lw=0, label="95% band")
    ax.plot(times, mu, color="tab:orange", lw=0.8, label="forecast mean")
    ax.plot(times, actual, color="tab:blue", lw=0.8, label="actual")
    ax.set_title(f"{sensor}: forecast vs actual")
    ax.set_xlabel("timestep")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    data = pd.DataFrame({"timestep": times, "actual": actual, "mu": mu, "sigma2": sigma2, "lower": lower, "upper": upper})
    return _save(fig, path, data)


def plot_embeddings(projection: pd.DataFrame, path: Path) -> Path:
    """PCA-2D scatter of sensor embeddings, one colour per sensor group."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for group, rows in projection.groupby("group", sort=True):
        ax.scatter(rows["pc1"], rows["pc2"], s=18, label=str(group))
    for _, row in projection.iterrows():
        ax.annotate(str(row["sensor_name"]), (row["pc1"], row["pc2"]), fontsize=6, alpha=0.7)
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.set_title("Sensor embeddings")
    if projection["group"].nunique() > 1:
        ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    return _save(fig, path, projection)
