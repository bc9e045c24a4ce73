"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds its output eagerly with numpy and, when any input requires a
gradient, records a node holding the parents and a closure that maps the
output gradient to per-parent gradients. :func:`backward` replays those nodes
once each in reverse topological order.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DegenerateFeatureError, DimensionError, DomainError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: zero denominator")

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(a.data / b.data, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


# -- linear algebra and reductions --------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.data.size == 0:
        raise ContractError("mean of an empty tensor")
    n = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward, "mean")


# -- nonlinearities -----------------------------------------------------------

def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0) or np.any(np.isnan(a.data)):
        raise DomainError("log of a nonpositive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    r = np.sqrt(a.data)
    return _make(r, (a,), lambda g: (g / (2.0 * r),), "sqrt")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), backward, "softmax")


def _log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ls = _log_softmax(a.data, axis)

    def backward(g):
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    return _make(ls, (a,), backward, "log_softmax")


def l2_norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    a = as_tensor(a)
    r = np.sqrt((a.data * a.data).sum(axis=axis))

    def backward(g):
        rk = np.expand_dims(r, axis)
        safe = np.where(rk > 0, rk, 1.0)
        return (np.where(rk > 0, a.data / safe, 0.0) * np.expand_dims(g, axis),)

    return _make(r, (a,), backward, "l2_norm")


def normalize_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"normalize_rows expects a matrix, got {a.shape}")
    r = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    if np.any(r == 0):
        raise DegenerateFeatureError("zero-norm feature row")
    y = a.data / r

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / r,)

    return _make(y, (a,), backward, "normalize_rows")


def cosine_similarity(a, b) -> Tensor:
    """Row-wise cosine similarity of two equally shaped matrices, shape ``(n,)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity: {a.shape} vs {b.shape}")
    return sum(normalize_rows(a) * normalize_rows(b), axis=1)


def cosine_matrix(a, b) -> Tensor:
    """All-pairs cosine similarity, entry (i, j) = cos(a_i, b_j)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_matrix: {a.shape} vs {b.shape}")
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


def batch_norm(
    x,
    gamma=None,
    beta=None,
    *,
    training: bool = True,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    momentum: float = 0.1,
    eps: float = 1e-7,
) -> Tensor:
    """Normalize each column over the batch axis.

    In training mode the batch statistics are used and the running buffers,
    when given, are updated in place (unbiased variance, like torch). In eval
    mode the running buffers are required.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"batch_norm expects (n, features), got {x.shape}")
    n = x.shape[0]
    if training:
        if n < 2:
            raise ContractError("batch_norm in training mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        if running_mean is None or running_var is None:
            raise ContractError("batch_norm eval mode needs running statistics")
        mu, var = running_mean.copy(), running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std

    parents = [x]
    g_arr = np.ones(x.shape[1]) if gamma is None else as_tensor(gamma).data
    out = xhat * g_arr
    if gamma is not None:
        parents.append(as_tensor(gamma))
    if beta is not None:
        beta = as_tensor(beta)
        out = out + beta.data
        parents.append(beta)

    def backward(g):
        dxhat = g * g_arr
        if training:
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        grads = [dx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=0))
        if beta is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _make(out, tuple(parents), backward, "batch_norm")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    n = logits.shape[0]
    if n == 0:
        raise ContractError("cross_entropy of an empty batch")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ContractError("label outside the class range")
    ls = _log_softmax(logits.data, axis=1)
    rows = np.arange(n)
    loss = -ls[rows, labels].mean()

    def backward(g):
        d = np.exp(ls)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return _make(np.asarray(loss), (logits,), backward, "cross_entropy")


OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "transpose": transpose,
    "sum": sum,
    "mean": mean,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "clip": clip,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "l2_norm": l2_norm,
    "normalize_rows": normalize_rows,
    "cosine_similarity": cosine_similarity,
    "cosine_matrix": cosine_matrix,
    "batch_norm": batch_norm,
    "cross_entropy": cross_entropy,
}


def forward_op(op_kind: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ContractError(f"unknown op {op_kind!r}") from None
    return fn(*inputs, **kwargs)


# -- reverse pass -------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, accumulate: bool = False) -> None:
    """Write d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Existing leaf gradients are overwritten unless ``accumulate`` is set.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if accumulate and node.grad is not None:
                node.grad = node.grad + g
            else:
                node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Iterable[Tensor], lr: float, grads: Sequence[np.ndarray] | None = None) -> None:
    """``p <- p - lr * grad`` for each parameter.

    Data arrays are replaced rather than mutated, so snapshots holding the old
    arrays stay valid. Parameters without a gradient are left unchanged.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    params = list(params)
    if grads is None:
        grads = [p.grad for p in params]
    elif len(grads) != len(params):
        raise ContractError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.data.shape}")
        p.data = p.data - lr * g
