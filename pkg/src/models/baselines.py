from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.decomposition import PCA

from src.data.windows import WindowBatch
from src.errors import BaselineError, TrainingDivergedError
from src.utils.adam import AdamState, adam_step
from src.utils.config import BaselineSection
from src.utils.console import get_logger
from src.utils.tape import Tape

logger = get_logger(__name__)

BaselineKind = Literal["pca", "knn", "ae", "var"]
ScoreKind = Literal["reconstruction-error", "knn-distance", "forecast-error"]

RIDGE_LAMBDA = 1e-6


def window_rows(windows: WindowBatch) -> np.ndarray:
    """Flatten each window to the w most recent readings ending at the target time: (B, N*w)."""
    recent = np.concatenate([windows.inputs[:, :, 1:], windows.targets[:, :, None]], axis=-1)
    return recent.reshape(len(windows), -1)


# --- PCA -------------------------------------------------------------------

@dataclass
class PcaState:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.components.shape[0])


def pca_fit(X: np.ndarray, n_components: Optional[int] = None, variance: float = 0.95) -> PcaState:
    """Principal axes of X; with no explicit count, the fewest axes explaining `variance`.

    Each axis is signed so its largest-magnitude coordinate is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n_rows, n_cols = X.shape
    if n_components is not None and n_components > n_cols:
        raise BaselineError(f"n_components={n_components} exceeds the data dimension {n_cols}")
    if n_rows < 2 or np.all(X == X[0]):
        raise BaselineError("PCA needs at least two distinct rows")

    full = PCA(n_components=min(n_rows, n_cols), svd_solver="full").fit(X)
    ratio = full.explained_variance_ratio_
    if n_components is None:
        cumulative = np.cumsum(ratio)
        n_components = min(int(np.searchsorted(cumulative, variance - 1e-12) + 1), len(ratio))
    if n_components > len(ratio):
        logger.warning("only %d principal axes available for %d rows; using all of them", len(ratio), n_rows)
        n_components = len(ratio)

    components = full.components_[:n_components].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaState(mean=full.mean_.copy(), components=components, explained_variance_ratio=ratio[:n_components].copy())


def pca_transform(state: PcaState, X: np.ndarray) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - state.mean) @ state.components.T


def pca_reconstruct(state: PcaState, X: np.ndarray) -> np.ndarray:
    return pca_transform(state, X) @ state.components + state.mean


def pca_score(state: PcaState, X: np.ndarray) -> np.ndarray:
    """Squared reconstruction error per row (a scalar for a single 1-D row)."""
    X = np.asarray(X, dtype=np.float64)
    resid = X - pca_reconstruct(state, np.atleast_2d(X))
    out = np.sum(np.atleast_2d(resid) ** 2, axis=1)
    return out[0] if X.ndim == 1 else out


# --- k nearest neighbours --------------------------------------------------

@dataclass
class KnnState:
    train: np.ndarray
    k: int = 5
    threads: int = 1


def knn_fit(train: np.ndarray, k: int = 5, threads: int = 1) -> KnnState:
    train = np.asarray(train, dtype=np.float64)
    if k < 1 or k > len(train):
        raise BaselineError(f"k={k} must lie in [1, {len(train)}] (number of training windows)")
    return KnnState(train=train, k=k, threads=threads)


def _knn_chunk(train: np.ndarray, queries: np.ndarray, k: int, leave_one_out: bool = False) -> np.ndarray:
    dist = cdist(queries, train, metric="euclidean")
    m = k + 1 if leave_one_out else k
    nearest = np.sort(np.partition(dist, m - 1, axis=1)[:, :m], axis=1)
    if leave_one_out:
        # the query is itself a training row: its zero self-distance is the smallest
        nearest = nearest[:, 1:]
    return nearest.sum(axis=1)


def knn_score(train: np.ndarray | KnnState, queries: np.ndarray, k: Optional[int] = None,
              threads: int = 1, chunk_size: int = 1024, leave_one_out: bool = False) -> np.ndarray:
    """Sum of Euclidean distances to the k nearest training rows (exact search).

    With `leave_one_out` the queries are the training rows themselves and each
    row's own match is skipped. Query chunks run on a thread pool when
    `threads` > 1; results keep query order.
    """
    state = train if isinstance(train, KnnState) else knn_fit(train, k or 5, threads)
    k = k or state.k
    limit = len(state.train) - 1 if leave_one_out else len(state.train)
    if k > limit:
        raise BaselineError(f"k={k} exceeds the {limit} usable training windows")
    queries = np.asarray(queries, dtype=np.float64)
    single = queries.ndim == 1
    queries = np.atleast_2d(queries)
    chunks = [queries[i:i + chunk_size] for i in range(0, len(queries), chunk_size)] or [queries]
    workers = max(1, threads if threads > 1 else state.threads)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda q: _knn_chunk(state.train, q, k, leave_one_out), chunks))
    else:
        parts = [_knn_chunk(state.train, q, k, leave_one_out) for q in chunks]
    out = np.concatenate(parts)
    return out[0] if single else out


# --- autoencoder -----------------------------------------------------------

@dataclass
class AeState:
    weights: Dict[str, np.ndarray]
    losses: List[float] = field(default_factory=list)

    @property
    def bottleneck(self) -> int:
        return int(self.weights["enc.1.weight"].shape[1])


def _ae_init(n_in: int, bottleneck: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    hidden = max(bottleneck, math.ceil(n_in / 2))
    sizes = [("enc.0", n_in, hidden), ("enc.1", hidden, bottleneck), ("dec.0", bottleneck, hidden), ("dec.1", hidden, n_in)]
    weights: Dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in sizes:
        bound = 1.0 / np.sqrt(fan_in)
        weights[f"{name}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights[f"{name}.bias"] = np.zeros(fan_out)
    return weights


def _ae_record(tape: Tape, weights: Dict[str, np.ndarray], X: np.ndarray):
    leaves = {name: tape.leaf(value, name=name) for name, value in weights.items()}
    h = tape.constant(X)
    for layer, relu in (("enc.0", True), ("enc.1", False), ("dec.0", True), ("dec.1", False)):
        h = tape.add(tape.matmul(h, leaves[f"{layer}.weight"]), leaves[f"{layer}.bias"])
        if relu:
            h = tape.relu(h)
    return leaves, h


def ae_reconstruct(state: AeState, X: np.ndarray) -> np.ndarray:
    tape = Tape()
    _, out = _ae_record(tape, state.weights, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return tape.value(out)


def ae_fit(
    X: np.ndarray,
    bottleneck: Optional[int] = None,
    epochs: int = 25,
    lr: float = 1e-3,
    batch_size: int = 128,
    seed: int = 0,
) -> AeState:
    """Train a D -> H -> b -> H -> D autoencoder on X with MSE and Adam."""
    X = np.asarray(X, dtype=np.float64)
    n_rows, n_in = X.shape
    bottleneck = bottleneck or math.ceil(n_in / 4)
    if bottleneck >= n_in:
        raise BaselineError(f"bottleneck {bottleneck} must be smaller than the input width {n_in}")
    rng = np.random.default_rng(seed)
    weights = _ae_init(n_in, bottleneck, rng)
    opt = AdamState.for_params(weights, lr=lr)
    losses: List[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n_rows)
        total = 0.0
        for step, start in enumerate(range(0, n_rows, batch_size)):
            batch = X[order[start:start + batch_size]]
            tape = Tape()
            leaves, out = _ae_record(tape, weights, batch)
            diff = tape.sub(out, tape.constant(batch))
            loss = tape.scale(tape.sum(tape.square(diff)), 1.0 / batch.size)
            value = float(tape.value(loss))
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, step, value)
            grads = tape.backward(loss)
            weights, opt = adam_step(weights, {name: grads[i] for name, i in leaves.items()}, opt)
            total += value * len(batch)
        losses.append(total / n_rows)
        logger.debug("[ae] epoch %d/%d loss %.6f", epoch + 1, epochs, losses[-1])
    return AeState(weights=weights, losses=losses)


def ae_score(state: AeState, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    resid = np.atleast_2d(X) - ae_reconstruct(state, X)
    out = np.sum(resid ** 2, axis=1)
    return out[0] if X.ndim == 1 else out


# --- vector autoregression ---------------------------------------------------

@dataclass
class VarState:
    coefs: np.ndarray       # (p, N, N): x_t = intercept + sum_l coefs[l] @ x_{t-l-1}
    intercept: np.ndarray   # (N,)
    ridge: float = 0.0

    @property
    def order(self) -> int:
        return int(self.coefs.shape[0])


def _ols(Z: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, float]:
    gram = Z.T @ Z
    ridge = 0.0
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        ridge = RIDGE_LAMBDA
        logger.warning("VAR design matrix is singular; refitting with ridge penalty %.0e", ridge)
        gram = gram + ridge * np.eye(gram.shape[0])
    return np.linalg.solve(gram, Z.T @ Y), ridge


def _state_from_solution(B: np.ndarray, p: int, n: int, ridge: float) -> VarState:
    coefs = B[1:].reshape(p, n, n).transpose(0, 2, 1).copy()
    return VarState(coefs=coefs, intercept=B[0].copy(), ridge=ridge)


def _lag_design(histories: np.ndarray, p: int) -> np.ndarray:
    """[1, x_{t-1}, ..., x_{t-p}] rows from (B, N, w) histories whose last column is t-1."""
    lags = [histories[:, :, -1 - lag] for lag in range(p)]
    return np.hstack([np.ones((len(histories), 1))] + lags)


def var_fit(series: np.ndarray, p: int) -> VarState:
    """Least-squares VAR(p) with intercept on one contiguous (T, N) series."""
    series = np.asarray(series, dtype=np.float64)
    T, n = series.shape
    if p < 1:
        raise BaselineError("VAR order must be >= 1")
    if T <= n * p + 1:
        raise BaselineError(f"VAR({p}) on {n} sensors needs more than {n * p + 1} rows, got {T}")
    Z = np.hstack([np.ones((T - p, 1))] + [series[p - lag - 1:T - lag - 1] for lag in range(p)])
    B, ridge = _ols(Z, series[p:])
    return _state_from_solution(B, p, n, ridge)


def var_fit_windows(windows: WindowBatch, p: int) -> VarState:
    """VAR(p) fitted on window histories, so trajectory boundaries are respected."""
    if p < 1 or p > windows.window:
        raise BaselineError(f"VAR order {p} must lie in [1, {windows.window}]")
    n = windows.n_sensors
    if len(windows) <= n * p + 1:
        raise BaselineError(f"VAR({p}) on {n} sensors needs more than {n * p + 1} windows, got {len(windows)}")
    B, ridge = _ols(_lag_design(windows.inputs, p), windows.targets)
    return _state_from_solution(B, p, n, ridge)


def var_forecast(state: VarState, history: np.ndarray) -> np.ndarray:
    """One-step forecast from an (N, >=p) history whose last column is t-1."""
    history = np.asarray(history, dtype=np.float64)
    out = state.intercept.copy()
    for lag in range(state.order):
        out = out + state.coefs[lag] @ history[:, -1 - lag]
    return out


def var_forecast_batch(state: VarState, histories: np.ndarray) -> np.ndarray:
    Z = _lag_design(np.asarray(histories, dtype=np.float64), state.order)
    B = np.vstack([state.intercept[None, :]] + [state.coefs[lag].T for lag in range(state.order)])
    return Z @ B


# --- common wrapper ----------------------------------------------------------

@dataclass
class BaselineModel:
    kind: BaselineKind
    state: Any
    score_kind: ScoreKind
    threads: int = 1

    def score(self, windows: WindowBatch, training: bool = False) -> np.ndarray:
        """Raw per-window anomaly scores (reconstruction and distance baselines).

        `training=True` marks `windows` as the fit set, so kNN leaves each row's
        own match out.
        """
        rows = window_rows(windows)
        if self.kind == "pca":
            return pca_score(self.state, rows)
        if self.kind == "knn":
            return knn_score(self.state, rows, threads=self.threads, leave_one_out=training)
        if self.kind == "ae":
            return ae_score(self.state, rows)
        raise BaselineError(f"'{self.kind}' is a forecaster; use forecast()")

    def forecast(self, windows: WindowBatch) -> np.ndarray:
        if self.kind != "var":
            raise BaselineError(f"'{self.kind}' does not forecast")
        return var_forecast_batch(self.state, windows.inputs)

    @property
    def is_forecaster(self) -> bool:
        return self.score_kind == "forecast-error"


def make_pca_baseline(train: WindowBatch, cfg: BaselineSection) -> BaselineModel:
    state = pca_fit(window_rows(train), cfg.pca_components, cfg.pca_variance)
    logger.info("[pca] %d component(s)", state.n_components)
    return BaselineModel("pca", state, "reconstruction-error")


def make_knn_baseline(train: WindowBatch, cfg: BaselineSection, threads: int = 1) -> BaselineModel:
    return BaselineModel("knn", knn_fit(window_rows(train), cfg.knn_k, threads), "knn-distance", threads)


def make_ae_baseline(train: WindowBatch, cfg: BaselineSection, seed: int = 0) -> BaselineModel:
    state = ae_fit(window_rows(train), cfg.ae_bottleneck, cfg.ae_epochs, cfg.ae_lr, cfg.ae_batch_size, seed)
    logger.info("[ae] bottleneck %d, final loss %.6f", state.bottleneck, state.losses[-1])
    return BaselineModel("ae", state, "reconstruction-error")


def make_var_baseline(train: WindowBatch, cfg: BaselineSection) -> BaselineModel:
    state = var_fit_windows(train, cfg.var_order or train.window)
    return BaselineModel("var", state, "forecast-error")


def fit_baseline(kind: str, train: WindowBatch, cfg: BaselineSection, seed: int = 0, threads: int = 1) -> BaselineModel:
    if kind == "pca":
        return make_pca_baseline(train, cfg)
    if kind == "knn":
        return make_knn_baseline(train, cfg, threads)
    if kind == "ae":
        return make_ae_baseline(train, cfg, seed)
    if kind == "var":
        return make_var_baseline(train, cfg)
    raise BaselineError(f"unknown baseline kind '{kind}'")
