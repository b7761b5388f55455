"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  ``backward``
orders the graph topologically and replays the closures in reverse.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # operator sugar; keeps model code readable
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite values in forward output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = np.zeros_like(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.name = None
    out.op = op
    out._parents = parents
    out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- forward ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data

    def backward(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _result(A @ B, "matmul", (a, b), backward)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ W + b`` with ``b`` broadcast over rows."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError("affine", x.shape, W.shape, b.shape)
    X, Wd = x.data, W.data

    def backward(g):
        return (g @ Wd.T if x.requires_grad else None,
                X.T @ g if W.requires_grad else None,
                g.sum(axis=0) if b.requires_grad else None)

    return _result(X @ Wd + b.data, "affine", (x, W, b), backward)


def weighted_sum(weights: Tensor, tensors: Sequence[Tensor], slots: Sequence[int]) -> Tensor:
    """``sum_k weights[slots[k]] * tensors[k]`` for a 1-D ``weights`` tensor."""
    tensors = tuple(tensors)
    if weights.data.ndim != 1 or len(tensors) != len(slots) or not tensors:
        raise ShapeError("weighted_sum", weights.shape, *(t.shape for t in tensors))
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise ShapeError("weighted_sum", *(t.shape for t in tensors))
    w = weights.data
    out = np.zeros(shape)
    for t, k in zip(tensors, slots):
        out = out + w[k] * t.data

    def backward(g):
        gw = None
        if weights.requires_grad:
            gw = np.zeros_like(w)
            for t, k in zip(tensors, slots):
                gw[k] += float(np.sum(g * t.data))
        return (gw, *(g * w[k] if t.requires_grad else None for t, k in zip(tensors, slots)))

    return _result(out, "weighted_sum", (weights, *tensors), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a scalar or row vector broadcasts over rows."""
    _broadcast_shape("mul_elementwise", a, b)
    A, B = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * B, A.shape) if a.requires_grad else None,
                _unbroadcast(g * A, B.shape) if b.requires_grad else None)

    return _result(A * B, "mul_elementwise", (a, b), backward)


mul_elementwise = mul


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, "scale", (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split branches so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.data.ndim <= axis < max(a.data.ndim, 1):
        raise ShapeError("softmax", a.shape, detail=f"axis {axis} out of range")
    s = softmax_array(a.data, axis)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _result(s, "softmax", (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat", detail="no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, "concat", tensors, backward)


def index(a: Tensor, i: int) -> Tensor:
    """Select one entry of a 1-D tensor as a 0-d tensor."""
    if a.data.ndim != 1 or not 0 <= i < a.shape[0]:
        raise ShapeError("index", a.shape, detail=f"index {i}")
    n = a.shape[0]

    def backward(g):
        out = np.zeros(n)
        out[i] = g
        return (out,)

    return _result(np.asarray(a.data[i]), "index", (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _result(np.asarray(a.data.mean()), "mean", (a,), lambda g: (np.full(shape, g / n),))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), "sum", (a,), lambda g: (np.full(shape, float(g)),))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy. 1-D logits are treated as a single sample."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    squeeze = logits.data.ndim == 1
    L = logits.data[None, :] if squeeze else logits.data
    if L.ndim != 2 or L.shape[0] != labels.shape[0]:
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    n, c = L.shape
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"cross_entropy: labels must lie in [0, {c})")
    z = L - L.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    probs = np.exp(z - logsum[:, None])

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        d *= g / n
        return (d[0] if squeeze else d,)

    return _result(np.asarray(loss), "cross_entropy", (logits,), backward)


# ---------------------------------------------------------------- backward

@dataclass
class Graph:
    """Topologically ordered view of the graph reachable from a root."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def tape(self) -> list[Tensor]:
        return [n for n in reversed(self.nodes) if n._backward is not None]


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor."""
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be scalar")
    graph = Graph.from_root(loss)
    # interior grads restart from zero; leaf grads accumulate across calls
    for node in graph.nodes:
        if node._backward is not None:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in graph.tape():
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if parent.requires_grad and g is not None:
                parent.grad = parent.grad + np.reshape(g, parent.shape)
    return graph


@contextmanager
def frozen(params: Iterable[Tensor]):
    """Temporarily mark ``params`` as constants so backward skips them."""
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


# ---------------------------------------------------------------- optimizers

class Optimizer:
    """Base class; buffers are keyed by parameter name so pruning is safe."""

    kind = "base"

    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.buffers: dict[str, dict[str, np.ndarray]] = {}
        self.steps = 0

    @staticmethod
    def zero_grad(params: Iterable[Tensor]) -> None:
        for p in params:
            p.zero_grad()

    def forget(self, names: Iterable[str]) -> None:
        for n in names:
            self.buffers.pop(n, None)

    def _key(self, p: Tensor, i: int) -> str:
        return p.name if p.name is not None else f"#{i}"

    def step(self, params: Sequence[Tensor]) -> None:
        self.steps += 1
        for i, p in enumerate(params):
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"{self.kind}.step", p.data.shape, p.grad.shape)
            buf = self.buffers.setdefault(self._key(p, i), {})
            self._update(p, p.grad + self.weight_decay * p.data, buf)

    def _update(self, p: Tensor, g: np.ndarray, buf: dict) -> None:  # pragma: no cover
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd-momentum"

    def __init__(self, lr: float = 0.025, momentum: float = 0.9, weight_decay: float = 3e-4):
        super().__init__(lr, weight_decay)
        self.momentum = momentum

    def _update(self, p, g, buf):
        if self.momentum:
            if "momentum" in buf:
                buf["momentum"] = self.momentum * buf["momentum"] + g
            else:
                buf["momentum"] = g.copy()
            g = buf["momentum"]
        p.data = p.data - self.lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, lr: float = 3e-4, betas: tuple[float, float] = (0.5, 0.999),
                 weight_decay: float = 1e-3, eps: float = 1e-8):
        super().__init__(lr, weight_decay)
        self.betas = tuple(betas)
        self.eps = eps

    def _update(self, p, g, buf):
        b1, b2 = self.betas
        t = buf.get("t", 0) + 1
        buf["t"] = t
        m = buf.get("m", np.zeros_like(g)) * b1 + (1 - b1) * g
        v = buf.get("v", np.zeros_like(g)) * b2 + (1 - b2) * g * g
        buf["m"], buf["v"] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if norm > max_norm > 0:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            p.grad = p.grad * factor
    return norm


# ---------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(build: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
               tolerance: float = 1e-4, step: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``build`` maps the parameter list to a scalar loss and must be a pure
    function of the parameter values.  The relative error uses
    ``|a - n| / max(1, |a|, |n|)`` so near-zero gradients are compared
    absolutely.
    """
    for p in params:
        p.requires_grad = True
        p.zero_grad()
    loss = build(params)
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    max_rel = max_abs = 0.0
    count = 0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = build(params).item()
            flat[k] = orig - step
            down = build(params).item()
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            a = ga.reshape(-1)[k]
            if not (math.isfinite(numeric) and math.isfinite(a)):
                raise FloatingPointError("grad_check: non-finite gradient")
            err = abs(a - numeric)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / max(1.0, abs(a), abs(numeric)))
            count += 1
    return GradCheckReport(max_rel, max_abs, count, tolerance)
