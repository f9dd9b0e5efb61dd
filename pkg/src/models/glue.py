"""Graph-attention forecaster with a Gaussian (or point) output head.

For every sensor i the model builds g_i = v_i ⊕ W x_i, scores every
neighbour j (and i itself) with LeakyReLU(aᵀ(g_i ⊕ g_j)), softmaxes the
scores over N(i) ∪ {i}, aggregates z_i = ReLU(Σ_j α_ij W x_j) and feeds
v_i ⊙ z_i through a small fully-connected head that returns the mean and
(in gaussian mode) the variance of the next reading.

The whole batch is recorded on a single `Tape`: attention runs densely over
an (N, N) score matrix whose non-neighbour entries are masked out before the
softmax.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax as _softmax

from src.data.windows import WindowBatch
from src.errors import TapeShapeError
from src.models.graph import SensorGraph
from src.utils.config import HeadMode
from src.utils.tape import Tape


@dataclass(frozen=True)
class GlueHyper:
    n_sensors: int
    d: int = 64
    window: int = 5
    k: int = 5
    leaky_slope: float = 0.2
    sigma_floor: float = 1e-6
    hidden_layers: int = 1
    head_mode: HeadMode = "gaussian"
    per_node_attention: bool = False

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class GlueParams:
    hyper: GlueHyper
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def V(self) -> np.ndarray:
        return self.arrays["V"]

    @property
    def head_mode(self) -> HeadMode:
        return self.hyper.head_mode

    def names(self) -> List[str]:
        return list(self.arrays)

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "GlueParams":
        return GlueParams(self.hyper, {name: np.asarray(arrays[name], dtype=np.float64) for name in self.arrays})

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.arrays.items()}


@dataclass
class ForecastDistribution:
    mu: np.ndarray
    sigma2: Optional[np.ndarray] = None
    attention: Optional[np.ndarray] = None

    def band(self, z: float = 1.96) -> Tuple[np.ndarray, np.ndarray]:
        if self.sigma2 is None:
            raise ValueError("point-mode forecasts have no uncertainty band")
        half = z * np.sqrt(self.sigma2)
        return self.mu - half, self.mu + half


def init_params(hyper: GlueHyper, seed: int = 0) -> GlueParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    n, d, w = hyper.n_sensors, hyper.d, hyper.window

    def _uniform(shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    arrays: Dict[str, np.ndarray] = {
        "V": _uniform((n, d), d),
        "W": _uniform((d, w), w),
        "a": _uniform((n, 4 * d) if hyper.per_node_attention else (4 * d,), 4 * d),
    }
    for layer in range(hyper.hidden_layers):
        arrays[f"head.{layer}.weight"] = _uniform((d, d), d)
        arrays[f"head.{layer}.bias"] = np.zeros(d)
    arrays["mu.weight"] = _uniform((d, 1), d)
    arrays["mu.bias"] = np.zeros(1)
    if hyper.head_mode == "gaussian":
        arrays["s.weight"] = _uniform((d, 1), d)
        arrays["s.bias"] = np.zeros(1)
    return GlueParams(hyper, arrays)


# Per-sensor building blocks. The batched tape forward computes the same
# quantities for every sensor at once.

def node_feature(v_i: np.ndarray, x_i: np.ndarray, W: np.ndarray) -> np.ndarray:
    if W.ndim != 2 or x_i.shape != (W.shape[1],) or v_i.shape != (W.shape[0],):
        raise TapeShapeError("node_feature", [v_i.shape, x_i.shape, W.shape])
    return np.concatenate([v_i, W @ x_i])


def attention_score(g_i: np.ndarray, g_j: np.ndarray, a: np.ndarray, leaky_slope: float = 0.2) -> float:
    s = float(np.dot(a, np.concatenate([g_i, g_j])))
    return s if s >= 0 else leaky_slope * s


def attention_weights(scores: np.ndarray) -> np.ndarray:
    # scipy's softmax subtracts the max before exponentiating
    return _softmax(np.asarray(scores, dtype=np.float64))


def aggregate(alpha: np.ndarray, W: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """ReLU of the attention-weighted sum of projected histories; xs rows align with alpha."""
    projected = xs @ W.T
    return np.maximum(alpha @ projected, 0.0)


def predict_distribution(v_i: np.ndarray, z_i: np.ndarray, params: GlueParams) -> Tuple[float, Optional[float]]:
    u = v_i * z_i
    for layer in range(params.hyper.hidden_layers):
        u = np.maximum(u @ params[f"head.{layer}.weight"] + params[f"head.{layer}.bias"], 0.0)
    mu = float((u @ params["mu.weight"] + params["mu.bias"])[0])
    if params.head_mode == "point":
        return mu, None
    s = float((u @ params["s.weight"] + params["s.bias"])[0])
    return mu, float(np.logaddexp(0.0, s)) + params.hyper.sigma_floor


@dataclass
class ForwardNodes:
    leaves: Dict[str, int]
    mu: int
    sigma2: Optional[int]
    attention: int


def record_forward(tape: Tape, params: GlueParams, inputs: np.ndarray, mask: np.ndarray) -> ForwardNodes:
    """Record the batched forward pass; `inputs` is (B, N, w), `mask` the (N, N) attention mask."""
    hyper = params.hyper
    B, N, w = inputs.shape
    d = hyper.d
    if N != hyper.n_sensors or w != hyper.window:
        raise TapeShapeError("forward", [inputs.shape], f"model expects (B, {hyper.n_sensors}, {hyper.window})")

    leaves = {name: tape.leaf(value, name=name) for name, value in params.arrays.items()}
    V, W, a = leaves["V"], leaves["W"], leaves["a"]
    X = tape.constant(inputs, name="inputs")

    h = tape.matmul(X, tape.transpose(W))                       # (B, N, d)
    g = tape.concat([tape.broadcast(V, (B, N, d)), h], axis=-1)  # (B, N, 2d)

    a_self = tape.slice(a, 0, 2 * d)
    a_other = tape.slice(a, 2 * d, 4 * d)
    if hyper.per_node_attention:
        s_self = tape.reshape(tape.sum(tape.mul(g, a_self), axis=-1), (B, N, 1))
        s_other = tape.transpose(tape.matmul(g, tape.transpose(a_other)))   # [b, i, j] = a_i' . g_j
    else:
        s_self = tape.matmul(g, tape.reshape(a_self, (2 * d, 1)))            # (B, N, 1)
        s_other = tape.transpose(tape.matmul(g, tape.reshape(a_other, (2 * d, 1))))  # (B, 1, N)
    scores = tape.leaky_relu(tape.add(s_self, s_other), hyper.leaky_slope)
    alpha = tape.softmax(scores, mask)
    z = tape.relu(tape.matmul(alpha, h))

    u = tape.mul(z, V)
    for layer in range(hyper.hidden_layers):
        u = tape.relu(tape.add(tape.matmul(u, leaves[f"head.{layer}.weight"]), leaves[f"head.{layer}.bias"]))
    mu = tape.reshape(tape.add(tape.matmul(u, leaves["mu.weight"]), leaves["mu.bias"]), (B, N))

    sigma2 = None
    if hyper.head_mode == "gaussian":
        s = tape.reshape(tape.add(tape.matmul(u, leaves["s.weight"]), leaves["s.bias"]), (B, N))
        sigma2 = tape.add(tape.softplus(s), tape.constant(hyper.sigma_floor))
    return ForwardNodes(leaves=leaves, mu=mu, sigma2=sigma2, attention=alpha)


def record_loss(tape: Tape, nodes: ForwardNodes, targets: np.ndarray, head_mode: HeadMode) -> int:
    """Batch-mean Gaussian NLL (summed over sensors), or plain MSE in point mode."""
    B, N = targets.shape
    y = tape.constant(targets, name="targets")
    sq = tape.square(tape.sub(y, nodes.mu))
    if head_mode == "point":
        return tape.scale(tape.sum(sq), 1.0 / (B * N))
    per_entry = tape.add(tape.log(nodes.sigma2), tape.div(sq, nodes.sigma2))
    return tape.scale(tape.sum(per_entry), 0.5 / B)


def forward(params: GlueParams, graph: SensorGraph, batch: WindowBatch | np.ndarray) -> ForecastDistribution:
    inputs = batch.inputs if isinstance(batch, WindowBatch) else np.asarray(batch, dtype=np.float64)
    tape = Tape()
    nodes = record_forward(tape, params, inputs, graph.attention_mask())
    return ForecastDistribution(
        mu=tape.value(nodes.mu),
        sigma2=None if nodes.sigma2 is None else tape.value(nodes.sigma2),
        attention=tape.value(nodes.attention),
    )


def predict(params: GlueParams, graph: SensorGraph, windows: WindowBatch, batch_size: int = 256) -> ForecastDistribution:
    """Forecasts for every window, computed in chunks of `batch_size`."""
    mus, sigmas = [], []
    for chunk in windows.batches(batch_size):
        out = forward(params, graph, chunk)
        mus.append(out.mu)
        if out.sigma2 is not None:
            sigmas.append(out.sigma2)
    n = params.hyper.n_sensors
    mu = np.concatenate(mus) if mus else np.zeros((0, n))
    sigma2 = None
    if params.head_mode == "gaussian":
        sigma2 = np.concatenate(sigmas) if sigmas else np.zeros((0, n))
    return ForecastDistribution(mu=mu, sigma2=sigma2)
