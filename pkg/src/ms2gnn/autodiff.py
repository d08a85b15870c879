"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array and,
when gradients are wanted, remembers the operation that produced it. A
forward pass therefore records an implicit tape (creation order is a
topological order); ``Tensor.backward`` replays that tape in reverse and
accumulates gradients on every reachable tensor with ``requires_grad``.

Only the operations needed by the graph layers, pooling, heads, and the
training objective are provided. Everything is float64; there is no
broadcasting beyond numpy's own rules, and gradients of broadcast inputs
are summed back to the input shape.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ShapeError, TrainingError

_node_ids = itertools.count()

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (pure inference)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array that can participate in reverse-mode autodiff.

    Tensors are treated as immutable once an operation has consumed them;
    optimizers mutate parameter ``data`` in place only *between* recorded
    forward passes. ``grad`` is populated by :meth:`backward` and has the
    same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "op_name", "parents",
                 "_backward_rule", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op_name: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self._backward_rule: Callable[[np.ndarray], None] | None = None
        self.node_id = next(_node_ids)

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        grad = ", grad_fn=%s" % self.op_name if self.op_name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph ----------------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self) -> list["Tensor"]:
        """Run reverse-mode accumulation from this (scalar) tensor.

        Returns the list of operation-output tensors in the order they
        were visited, which is the exact reverse of a topological order
        of the recorded tape. Callers can use it to assert traversal
        order or inspect the graph; most just ignore it.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar, got shape {self.shape}")
        order = tape(self)
        self.grad = np.ones_like(self.data)
        visited: list[Tensor] = []
        for node in reversed(order):
            if node._backward_rule is None or node.grad is None:
                continue
            visited.append(node)
            node._backward_rule(node.grad)
        return visited

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self):
        return transpose(self)

    def relu(self):
        return relu(self)

    def leaky_relu(self, slope: float):
        return leaky_relu(self, slope)

    def sigmoid(self):
        return sigmoid(self)

    def log1p(self):
        return log1p(self)

    def sqrt(self):
        return sqrt(self)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of operation outputs reachable from ``root``.

    Every operation's inputs appear before the operation itself; leaves
    (tensors without a recorded operation) are excluded.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            if node._backward_rule is not None:
                order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    return order


def _record(out: Tensor, name: str, parents: Sequence[Tensor],
            rule: Callable[[np.ndarray], None]) -> Tensor:
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op_name = name
        out.parents = tuple(parents)
        out._backward_rule = rule
    return out


# -- arithmetic ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def rule(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _record(out, "add", (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def rule(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _record(out, "mul", (a, b), rule)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def rule(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record(out, "div", (a, b), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors; dA = g·Bᵀ, dB = Aᵀ·g."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def rule(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _record(out, "matmul", (a, b), rule)


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)

    def rule(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _record(out, "transpose", (a,), rule)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def rule(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _record(out, "reshape", (a,), rule)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def rule(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            expanded = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(expanded, a.shape))

    return _record(out, "sum", (a,), rule)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims),
               _as_tensor(1.0 / count))


# -- pointwise nonlinearities ---------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def rule(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _record(out, "relu", (a,), rule)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    out = Tensor(np.where(a.data > 0.0, a.data, slope * a.data))

    def rule(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0.0, 1.0, slope))

    return _record(out, "leaky_relu", (a,), rule)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s)

    def rule(g):
        if a.requires_grad:
            a._accumulate(g * s * (1.0 - s))

    return _record(out, "sigmoid", (a,), rule)


def log1p(a: Tensor) -> Tensor:
    if np.any(a.data <= -1.0):
        raise DomainError("log1p requires inputs > -1")
    out = Tensor(np.log1p(a.data))

    def rule(g):
        if a.requires_grad:
            a._accumulate(g / (1.0 + a.data))

    return _record(out, "log1p", (a,), rule)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires non-negative inputs")
    root = np.sqrt(a.data)
    out = Tensor(root)

    def rule(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / root)

    return _record(out, "sqrt", (a,), rule)


# -- structural ops -------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    widths = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def rule(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return _record(out, "concat", tensors, rule)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows ``a[indices]``; the backward pass scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx])

    def rule(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    return _record(out, "gather_rows", (a,), rule)


def segment_sum(a: Tensor, segments, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given per-row ids."""
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError(
            f"segment ids ({seg.shape[0]}) must match rows ({a.shape[0]})")
    result = np.zeros((num_segments,) + a.shape[1:], dtype=np.float64)
    np.add.at(result, seg, a.data)
    out = Tensor(result)

    def rule(g):
        if a.requires_grad:
            a._accumulate(g[seg])

    return _record(out, "segment_sum", (a,), rule)


def segment_max(a: Tensor, segments, num_segments: int) -> Tensor:
    """Per-segment elementwise maximum over rows; every segment must be hit."""
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError(
            f"segment ids ({seg.shape[0]}) must match rows ({a.shape[0]})")
    counts = np.bincount(seg, minlength=num_segments)
    if np.any(counts == 0):
        raise DomainError("segment_max: every segment needs at least one row")
    result = np.full((num_segments,) + a.shape[1:], -np.inf, dtype=np.float64)
    np.maximum.at(result, seg, a.data)
    out = Tensor(result)

    def rule(g):
        if not a.requires_grad:
            return
        # Route gradient to the first row attaining each segment maximum.
        acc = np.zeros_like(a.data)
        taken = np.zeros_like(result, dtype=bool)
        for row in range(a.shape[0]):
            s = seg[row]
            hit = (a.data[row] == result[s]) & ~taken[s]
            acc[row][hit] = g[s][hit]
            taken[s] |= hit
        a._accumulate(acc)

    return _record(out, "segment_max", (a,), rule)


def segment_softmax(scores: Tensor, segments) -> Tensor:
    """Softmax of a 1-D score vector within each segment.

    Stabilized by subtracting the per-segment maximum, so outputs are
    invariant to adding a constant to all scores of a segment and sum
    to one per segment.
    """
    if scores.ndim != 1:
        raise ShapeError(f"segment_softmax expects 1-D scores, got {scores.shape}")
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape[0] == 0:
        raise DomainError("segment_softmax: no entries")
    if seg.shape[0] != scores.shape[0]:
        raise ShapeError(
            f"segment ids ({seg.shape[0]}) must match scores ({scores.shape[0]})")
    num = int(seg.max()) + 1
    seg_max = np.full(num, -np.inf)
    np.maximum.at(seg_max, seg, scores.data)
    shifted = np.exp(scores.data - seg_max[seg])
    seg_total = np.bincount(seg, weights=shifted, minlength=num)
    y = shifted / seg_total[seg]
    out = Tensor(y)

    def rule(g):
        if scores.requires_grad:
            inner = np.bincount(seg, weights=g * y, minlength=num)
            scores._accumulate(y * (g - inner[seg]))

    return _record(out, "segment_softmax", (scores,), rule)


def dropout(a: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time.

    Evaluation mode (``training=False``) is the identity. The generator is
    required in training mode so every stochastic draw is seed-controlled.
    """
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise DomainError("dropout in training mode needs an rng")
    keep = rng.random(a.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = Tensor(a.data * keep * scale)

    def rule(g):
        if a.requires_grad:
            a._accumulate(g * keep * scale)

    return _record(out, "dropout", (a,), rule)


# -- objectives -----------------------------------------------------------


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(
            f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff))
    scale = 2.0 / pred.size

    def rule(g):
        if pred.requires_grad:
            pred._accumulate(g * scale * diff)
        if target.requires_grad:
            target._accumulate(-g * scale * diff)

    return _record(out, "mse_loss", (pred, target), rule)


def l2_penalty(weights: Iterable[Tensor], lam: float) -> Tensor:
    """lam times the summed squared entries of every weight tensor.

    Bias vectors are excluded by convention: callers pass weight matrices
    only.
    """
    if lam < 0.0:
        raise DomainError(f"l2 lambda must be non-negative, got {lam}")
    total = Tensor(0.0)
    if lam == 0.0:
        return total
    for w in weights:
        total = add(total, tensor_sum(mul(w, w)))
    return mul(total, _as_tensor(lam))


# -- optimizer ------------------------------------------------------------


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(state: AdamState, params: Mapping[str, Tensor],
              grads: Mapping[str, np.ndarray]) -> Mapping[str, Tensor]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if np.any(np.isnan(g)):
            raise TrainingError(f"NaN gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# -- verification ---------------------------------------------------------


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               step: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must return a scalar Tensor and be deterministic (freeze any
    dropout seed inside it). When ``max_entries`` is given, at most that
    many coordinates per input are probed (sampled with ``rng``), which
    keeps full-model checks fast; otherwise every coordinate is probed.

    Returns the maximum relative error, with the relative denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    for x in inputs:
        x.requires_grad = True
        x.zero_grad()
    f(*inputs).backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy()
                for x in inputs]

    worst = 0.0
    for x, a in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_entries, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                hi = float(f(*inputs).data)
                flat[i] = orig - step
                lo = float(f(*inputs).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            ana = a.reshape(-1)[i]
            denom = max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, abs(ana - numeric) / denom)
    return worst
