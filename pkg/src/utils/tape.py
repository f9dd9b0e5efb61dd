"""Reverse-mode differentiation over dense float64 numpy arrays.

A `Tape` is a Wengert list: every recorded node keeps its op kind, the ids of
its inputs (always earlier nodes) and its cached forward value. `backward`
walks the list in reverse and accumulates vector-Jacobian products into the
leaves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.errors import NonScalarRootError, TapeShapeError

DEFAULT_LEAKY_SLOPE = 0.2

OP_ALIASES = {
    "elementwise-mul": "mul",
    "LeakyReLU": "leaky_relu",
    "ReLU": "relu",
    "reduce-sum": "reduce_sum",
    "softmax-row": "softmax_row",
}


@dataclass
class Node:
    kind: str
    inputs: Tuple[int, ...]
    payload: Any
    value: np.ndarray
    name: Optional[str] = None
    requires_grad: bool = False


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _check_broadcast(kind: str, xs: Sequence[np.ndarray]) -> None:
    try:
        np.broadcast_shapes(*(x.shape for x in xs))
    except ValueError:
        raise TapeShapeError(kind, [x.shape for x in xs], "operands do not broadcast") from None


def _check_matmul(kind: str, xs: Sequence[np.ndarray]) -> None:
    a, b = xs
    if a.ndim < 2 or b.ndim < 2:
        raise TapeShapeError(kind, [a.shape, b.shape], "matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise TapeShapeError(kind, [a.shape, b.shape], f"inner dims {a.shape[-1]} != {b.shape[-2]}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise TapeShapeError(kind, [a.shape, b.shape], "batch dims do not broadcast") from None


def _check_concat(kind: str, xs: Sequence[np.ndarray], axis: int) -> None:
    ndims = {x.ndim for x in xs}
    if len(ndims) != 1:
        raise TapeShapeError(kind, [x.shape for x in xs], "operands differ in rank")
    ndim = ndims.pop()
    ax = axis % ndim
    rest = {tuple(s for i, s in enumerate(x.shape) if i != ax) for x in xs}
    if len(rest) != 1:
        raise TapeShapeError(kind, [x.shape for x in xs], f"non-concat dims differ (axis={axis})")


def _softmax_forward(x: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _reduce_sum_backward(g: np.ndarray, x: np.ndarray, axis: Optional[int]) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, x.shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()


def _slice_backward(g: np.ndarray, x: np.ndarray, bounds: Tuple[int, int]) -> np.ndarray:
    out = np.zeros_like(x)
    out[..., bounds[0]:bounds[1]] = g
    return out


Forward = Callable[[List[np.ndarray], Any], np.ndarray]
Backward = Callable[[np.ndarray, List[np.ndarray], np.ndarray, Any], List[np.ndarray]]

_FORWARD: Dict[str, Forward] = {
    "add": lambda xs, p: xs[0] + xs[1],
    "sub": lambda xs, p: xs[0] - xs[1],
    "mul": lambda xs, p: xs[0] * xs[1],
    "div": lambda xs, p: xs[0] / xs[1],
    "matmul": lambda xs, p: np.matmul(xs[0], xs[1]),
    "concat": lambda xs, p: np.concatenate(xs, axis=-1 if p is None else p),
    "leaky_relu": lambda xs, p: np.where(xs[0] >= 0, xs[0], (DEFAULT_LEAKY_SLOPE if p is None else p) * xs[0]),
    "relu": lambda xs, p: np.where(xs[0] >= 0, xs[0], 0.0),
    "softplus": lambda xs, p: np.logaddexp(0.0, xs[0]),
    "exp": lambda xs, p: np.exp(xs[0]),
    "log": lambda xs, p: np.log(xs[0]),
    "square": lambda xs, p: xs[0] * xs[0],
    "reduce_sum": lambda xs, p: np.asarray(np.sum(xs[0], axis=p)),
    "softmax_row": lambda xs, p: _softmax_forward(xs[0], p),
    "reshape": lambda xs, p: xs[0].reshape(p),
    "broadcast": lambda xs, p: np.broadcast_to(xs[0], p).copy(),
    "transpose": lambda xs, p: _swap(xs[0]).copy(),
    "slice": lambda xs, p: xs[0][..., p[0]:p[1]].copy(),
}

_BACKWARD: Dict[str, Backward] = {
    "add": lambda g, xs, y, p: [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)],
    "sub": lambda g, xs, y, p: [_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)],
    "mul": lambda g, xs, y, p: [_unbroadcast(g * xs[1], xs[0].shape), _unbroadcast(g * xs[0], xs[1].shape)],
    "div": lambda g, xs, y, p: [
        _unbroadcast(g / xs[1], xs[0].shape),
        _unbroadcast(-g * xs[0] / (xs[1] * xs[1]), xs[1].shape),
    ],
    "matmul": lambda g, xs, y, p: [
        _unbroadcast(np.matmul(g, _swap(xs[1])), xs[0].shape),
        _unbroadcast(np.matmul(_swap(xs[0]), g), xs[1].shape),
    ],
    "concat": lambda g, xs, y, p: np.split(
        g, np.cumsum([x.shape[-1 if p is None else p] for x in xs])[:-1], axis=-1 if p is None else p
    ),
    # the kink at exactly 0 takes the positive-side slope
    "leaky_relu": lambda g, xs, y, p: [g * np.where(xs[0] >= 0, 1.0, DEFAULT_LEAKY_SLOPE if p is None else p)],
    "relu": lambda g, xs, y, p: [g * (xs[0] >= 0)],
    "softplus": lambda g, xs, y, p: [g * expit(xs[0])],
    "exp": lambda g, xs, y, p: [g * y],
    "log": lambda g, xs, y, p: [g / xs[0]],
    "square": lambda g, xs, y, p: [2.0 * xs[0] * g],
    "reduce_sum": lambda g, xs, y, p: [_reduce_sum_backward(g, xs[0], p)],
    "softmax_row": lambda g, xs, y, p: [y * (g - np.sum(g * y, axis=-1, keepdims=True))],
    "reshape": lambda g, xs, y, p: [g.reshape(xs[0].shape)],
    "broadcast": lambda g, xs, y, p: [_unbroadcast(g, xs[0].shape)],
    "transpose": lambda g, xs, y, p: [_swap(g)],
    "slice": lambda g, xs, y, p: [_slice_backward(g, xs[0], p)],
}

_ARITY = {
    "add": 2, "sub": 2, "mul": 2, "div": 2, "matmul": 2,
    "leaky_relu": 1, "relu": 1, "softplus": 1, "exp": 1, "log": 1, "square": 1,
    "reduce_sum": 1, "softmax_row": 1, "reshape": 1, "broadcast": 1, "transpose": 1, "slice": 1,
}


def _validate(kind: str, xs: List[np.ndarray], payload: Any) -> None:
    arity = _ARITY.get(kind)
    if arity is not None and len(xs) != arity:
        raise TapeShapeError(kind, [x.shape for x in xs], f"expects {arity} input(s), got {len(xs)}")
    if kind in ("add", "sub", "mul", "div"):
        _check_broadcast(kind, xs)
    elif kind == "matmul":
        _check_matmul(kind, xs)
    elif kind == "concat":
        if not xs:
            raise TapeShapeError(kind, [], "needs at least one input")
        _check_concat(kind, xs, -1 if payload is None else payload)
    elif kind == "reshape":
        if int(np.prod(payload)) != xs[0].size:
            raise TapeShapeError(kind, [xs[0].shape], f"cannot reshape to {tuple(payload)}")
    elif kind == "broadcast":
        try:
            ok = np.broadcast_shapes(xs[0].shape, tuple(payload)) == tuple(payload)
        except ValueError:
            ok = False
        if not ok:
            raise TapeShapeError(kind, [xs[0].shape], f"cannot broadcast to {tuple(payload)}")
    elif kind == "transpose":
        if xs[0].ndim < 2:
            raise TapeShapeError(kind, [xs[0].shape], "needs at least 2 dims")
    elif kind == "slice":
        start, stop = payload
        if xs[0].ndim < 1 or not 0 <= start < stop <= xs[0].shape[-1]:
            raise TapeShapeError(kind, [xs[0].shape], f"bad last-axis slice [{start}:{stop}]")
    elif kind == "reduce_sum":
        if payload is not None and not -xs[0].ndim <= payload < xs[0].ndim:
            raise TapeShapeError(kind, [xs[0].shape], f"axis {payload} out of range")
    elif kind == "softmax_row":
        if xs[0].ndim < 1:
            raise TapeShapeError(kind, [xs[0].shape], "needs at least 1 dim")
        if payload is not None:
            try:
                mask = np.broadcast_to(payload, xs[0].shape)
            except ValueError:
                raise TapeShapeError(kind, [xs[0].shape, np.shape(payload)], "mask does not broadcast") from None
            if not mask.any(axis=-1).all():
                raise TapeShapeError(kind, [xs[0].shape], "a row has every entry masked")


class Tape:
    """Single-threaded recording of differentiable array computations."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self._needs_grad: List[bool] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value: Any, name: Optional[str] = None, requires_grad: bool = True) -> int:
        arr = np.array(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), None, arr, name=name, requires_grad=requires_grad))
        self._needs_grad.append(requires_grad)
        return len(self.nodes) - 1

    def constant(self, value: Any, name: Optional[str] = None) -> int:
        return self.leaf(value, name=name, requires_grad=False)

    def value(self, node: int) -> np.ndarray:
        return self.nodes[node].value

    def record(self, op_kind: str, inputs: Sequence[int], payload: Any = None) -> int:
        kind = OP_ALIASES.get(op_kind, op_kind)
        if kind not in _FORWARD:
            raise ValueError(f"unsupported op kind '{op_kind}'")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"input node {i} is not on the tape")
        xs = [self.nodes[i].value for i in inputs]
        _validate(kind, xs, payload)
        out = np.asarray(_FORWARD[kind](xs, payload), dtype=np.float64)
        self.nodes.append(Node(kind, tuple(inputs), payload, out))
        self._needs_grad.append(any(self._needs_grad[i] for i in inputs))
        return len(self.nodes) - 1

    def backward(self, root: int) -> Dict[int, np.ndarray]:
        """Gradients of the scalar `root` for every leaf that requires grad."""
        root_value = self.nodes[root].value
        if root_value.size != 1:
            raise NonScalarRootError(root_value.shape)
        adjoints: Dict[int, np.ndarray] = {root: np.ones_like(root_value)}
        for idx in range(root, -1, -1):
            g = adjoints.get(idx)
            node = self.nodes[idx]
            if g is None or node.kind == "leaf":
                continue
            xs = [self.nodes[i].value for i in node.inputs]
            grads = _BACKWARD[node.kind](g, xs, node.value, node.payload)
            for i, gi in zip(node.inputs, grads):
                if not self._needs_grad[i]:
                    continue
                if i in adjoints:
                    adjoints[i] = adjoints[i] + gi
                else:
                    adjoints[i] = np.array(gi, dtype=np.float64)
        return {
            i: adjoints.get(i, np.zeros_like(n.value))
            for i, n in enumerate(self.nodes[: root + 1])
            if n.kind == "leaf" and n.requires_grad
        }

    def replay(self) -> List[np.ndarray]:
        """Recompute every node from the leaf values."""
        values: List[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "leaf":
                values.append(node.value)
            else:
                xs = [values[i] for i in node.inputs]
                values.append(np.asarray(_FORWARD[node.kind](xs, node.payload), dtype=np.float64))
        return values

    # Shorthands used by the models.
    def add(self, a: int, b: int) -> int:
        return self.record("add", [a, b])

    def sub(self, a: int, b: int) -> int:
        return self.record("sub", [a, b])

    def mul(self, a: int, b: int) -> int:
        return self.record("mul", [a, b])

    def div(self, a: int, b: int) -> int:
        return self.record("div", [a, b])

    def matmul(self, a: int, b: int) -> int:
        return self.record("matmul", [a, b])

    def concat(self, xs: Sequence[int], axis: int = -1) -> int:
        return self.record("concat", list(xs), axis)

    def leaky_relu(self, x: int, slope: float = DEFAULT_LEAKY_SLOPE) -> int:
        return self.record("leaky_relu", [x], slope)

    def relu(self, x: int) -> int:
        return self.record("relu", [x])

    def softplus(self, x: int) -> int:
        return self.record("softplus", [x])

    def exp(self, x: int) -> int:
        return self.record("exp", [x])

    def log(self, x: int) -> int:
        return self.record("log", [x])

    def square(self, x: int) -> int:
        return self.record("square", [x])

    def sum(self, x: int, axis: Optional[int] = None) -> int:
        return self.record("reduce_sum", [x], axis)

    def softmax(self, x: int, mask: Optional[np.ndarray] = None) -> int:
        return self.record("softmax_row", [x], mask)

    def reshape(self, x: int, shape: Sequence[int]) -> int:
        return self.record("reshape", [x], tuple(shape))

    def broadcast(self, x: int, shape: Sequence[int]) -> int:
        return self.record("broadcast", [x], tuple(shape))

    def transpose(self, x: int) -> int:
        return self.record("transpose", [x])

    def slice(self, x: int, start: int, stop: int) -> int:
        return self.record("slice", [x], (int(start), int(stop)))

    def scale(self, x: int, factor: float) -> int:
        return self.mul(x, self.constant(factor))


def finite_difference_grad(f: Callable[[np.ndarray], float], x: Any, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of scalar `f` at `x`, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        f_plus = float(f(x.copy()))
        x[idx] = orig - eps
        f_minus = float(f(x.copy()))
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad
