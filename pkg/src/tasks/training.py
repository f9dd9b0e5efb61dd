from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.data.dataset import NormStats
from src.data.windows import WindowBatch
from src.errors import TrainingDivergedError
from src.models.checkpoint import Checkpoint, save_checkpoint
from src.models.glue import GlueParams, record_forward, record_loss
from src.models.graph import Candidates, SensorGraph, build_graph
from src.utils.adam import AdamState, adam_step
from src.utils.config import HeadMode, RefreshSchedule, RunConfig
from src.utils.console import get_logger
from src.utils.tape import Tape

logger = get_logger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(25, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.99, gt=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(128, ge=1)
    seed: int = 0
    head_mode: HeadMode = "gaussian"
    adjacency_refresh: RefreshSchedule = "per-epoch"
    shuffle: bool = True
    clip_norm: Optional[float] = Field(5.0, gt=0.0)

    @classmethod
    def from_run(cls, config: RunConfig) -> "TrainConfig":
        t = config.train
        return cls(
            epochs=t.epochs, lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps,
            batch_size=t.batch_size, seed=config.run.seed, head_mode=config.model.head_mode,
            adjacency_refresh=config.model.refresh, shuffle=t.shuffle, clip_norm=t.clip_norm,
        )


@dataclass
class TrainReport:
    losses: List[float] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    graph: Optional[SensorGraph] = None

    def save_csv(self, path: Path) -> Path:
        # no wall-clock columns: same seed, same bytes
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame({"epoch": np.arange(1, len(self.losses) + 1), "loss": self.losses})
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


def gaussian_nll(mu: np.ndarray, sigma2: np.ndarray, y: np.ndarray) -> float:
    """Sum over sensors of log(σ²)/2 + (y−μ)²/(2σ²), averaged over the batch."""
    mu, sigma2, y = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (mu, sigma2, y))
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma2)) and np.all(np.isfinite(y))):
        raise ValueError("gaussian_nll received non-finite inputs")
    if np.any(sigma2 <= 0):
        raise ValueError("gaussian_nll needs strictly positive variances")
    per_sensor = 0.5 * np.log(sigma2) + 0.5 * (y - mu) ** 2 / sigma2
    return float(per_sensor.sum(axis=-1).mean())


def mse_loss(point: np.ndarray, y: np.ndarray) -> float:
    point, y = np.asarray(point, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if point.shape != y.shape:
        raise ValueError(f"shape mismatch: {point.shape} vs {y.shape}")
    return float(np.mean((y - point) ** 2))


def batch_loss(params: GlueParams, graph: SensorGraph, batch: WindowBatch) -> float:
    tape = Tape()
    nodes = record_forward(tape, params, batch.inputs, graph.attention_mask())
    return float(tape.value(record_loss(tape, nodes, batch.targets, params.head_mode)))


def loss_and_grads(params: GlueParams, graph: SensorGraph, batch: WindowBatch) -> Tuple[float, Dict[str, np.ndarray]]:
    tape = Tape()
    nodes = record_forward(tape, params, batch.inputs, graph.attention_mask())
    root = record_loss(tape, nodes, batch.targets, params.head_mode)
    grads = tape.backward(root)
    return float(tape.value(root)), {name: grads[i] for name, i in nodes.leaves.items()}


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale every block by one factor so the global L2 norm is at most `max_norm`."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or not np.isfinite(norm) or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


def _batch_slices(n: int, batch_size: int) -> List[Tuple[int, int]]:
    bounds = [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        bounds = bounds[:-1]
    return bounds


def train(
    params: GlueParams,
    windows: WindowBatch,
    config: TrainConfig,
    candidates: Optional[Candidates] = None,
    checkpoint_path: Optional[Path] = None,
    sensor_names: Optional[Sequence[str]] = None,
    norm_stats: Optional[NormStats] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Tuple[GlueParams, TrainReport]:
    """Fit the forecaster with Adam; the graph is rebuilt from V on the configured schedule.

    Raises:
        TrainingDivergedError: the batch loss became NaN or Inf.
    """
    if len(windows) == 0:
        raise ValueError("no training windows")
    if config.head_mode != params.head_mode:
        raise ValueError(f"config head_mode '{config.head_mode}' does not match model '{params.head_mode}'")
    k = params.hyper.k
    rng = np.random.default_rng(config.seed)
    opt = AdamState.for_params(params.arrays, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    arrays = dict(params.arrays)
    graph = build_graph(arrays["V"], k, candidates)
    report = TrainReport()

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        if config.adjacency_refresh == "per-epoch" and epoch > 1:
            graph = build_graph(arrays["V"], k, candidates)
        order = rng.permutation(len(windows)) if config.shuffle else np.arange(len(windows))
        total, seen = 0.0, 0
        for step, (lo, hi) in enumerate(_batch_slices(len(windows), config.batch_size), start=1):
            if config.adjacency_refresh == "per-step" and not (epoch == 1 and step == 1):
                graph = build_graph(arrays["V"], k, candidates)
            batch = windows.take(order[lo:hi])
            loss, grads = loss_and_grads(params.with_arrays(arrays), graph, batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, step, loss)
            grads, _ = clip_gradients(grads, config.clip_norm)
            arrays, opt = adam_step(arrays, grads, opt)
            total += loss * len(batch)
            seen += len(batch)
        report.losses.append(total / seen)
        report.epoch_seconds.append(time.perf_counter() - started)
        logger.info("[train] epoch %d/%d loss %.6f (%.1fs)", epoch, config.epochs, report.losses[-1],
                    report.epoch_seconds[-1])

    trained = params.with_arrays(arrays)
    report.graph = build_graph(trained.V, k, candidates)
    if checkpoint_path is not None:
        names = list(sensor_names) if sensor_names is not None else [f"s{i}" for i in range(params.hyper.n_sensors)]
        ckpt = Checkpoint(
            params=trained,
            graph=report.graph,
            sensor_names=names,
            seed=config.seed,
            norm_stats=norm_stats,
            train_config=config.model_dump(),
            meta=meta or {},
        )
        report.checkpoint_path = save_checkpoint(ckpt, checkpoint_path)
        logger.info("[train] checkpoint written to %s", report.checkpoint_path)
    return trained, report
