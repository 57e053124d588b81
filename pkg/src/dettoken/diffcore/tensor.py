"""Dense tensors with a recorded tape and reverse-mode differentiation.

Operations are only recorded while a :class:`Graph` is active (``with Graph() as g``).
Outside a graph every op is a plain numpy computation, which is what evaluation and
generation use.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

_ACTIVE: list["Graph"] = []

NEG_INF = -1e9


class Graph:
    """Ordered record of primitive ops. Nodes are appended in execution order, so the
    list is already topologically sorted."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]


def recording() -> bool:
    return bool(_ACTIVE)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- operator sugar ---------------------------------------------------
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.op = op
    out.parents = ()
    out._backward = None
    out.name = None
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
        _ACTIVE[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- backward ---------------------------------------------------------------
def _walk(graph: Graph, loss: Tensor, check: bool) -> dict[int, tuple[Tensor, np.ndarray]]:
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    if loss.is_leaf:
        leaves[id(loss)] = (loss, grads[id(loss)])
        return leaves
    for node in reversed(graph.nodes):
        gout = grads.pop(id(node), None)
        if gout is None:
            continue
        in_grads = node._backward(gout)
        for p, g in zip(node.parents, in_grads):
            if g is None or not p.requires_grad:
                continue
            if check and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient produced by primitive '{node.op}'")
            key = id(p)
            if p.is_leaf:
                if key in leaves:
                    leaves[key] = (p, leaves[key][1] + g)
                else:
                    leaves[key] = (p, g)
            elif key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
    return leaves


def backward(graph: Graph, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Returns a map leaf -> gradient of this pass. Leaves listed in ``wrt`` that are not
    reachable from ``loss`` map to zeros.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    leaves = _walk(graph, loss, check=False)
    if not all(np.all(np.isfinite(g)) for _, g in leaves.values()):
        _walk(graph, loss, check=True)  # raises, naming the primitive
        raise FloatingPointError("non-finite gradient")
    out: dict[Tensor, np.ndarray] = {}
    for leaf, g in leaves.values():
        g = g.astype(leaf.dtype, copy=False).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        out[leaf] = g
    for leaf in wrt or ():
        out.setdefault(leaf, np.zeros_like(leaf.data))
    return out


# -- elementwise arithmetic -------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape))
    return _node(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tabs(a: Tensor) -> Tensor:
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    pick_a = a.data >= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
                 "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    pick_a = a.data <= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
                 "minimum")


# -- activations ------------------------------------------------------------
def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _node(a.data * on, (a,), lambda g: (g * on,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)
    return _node(out, (a,), bw, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _node(out, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _node(out, (a,), bw, "log_softmax")


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = g * gamma.data
        n = x.shape[-1]
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
        dgamma = _unbroadcast(g * xhat, gamma.shape)
        dbeta = _unbroadcast(g, beta.shape)
        return (dx, dgamma, dbeta)
    return _node(out, (a, gamma, beta), bw, "layer_norm")


# -- linear algebra and shape ops -------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes are batch axes."""
    a = as_tensor(a)
    b = as_tensor(b, a)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        if ga is not None:
            ga = _unbroadcast(ga, a.shape)
        if gb is not None:
            gb = _unbroadcast(gb, b.shape)
        return (ga, gb)
    return _node(a.data @ b.data, (a, b), bw, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    """Slicing / integer indexing. Repeated indices accumulate in the backward pass."""
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return _node(a.data[idx], (a,), bw, "slice")


def gather(a: Tensor, index, axis: int = 0) -> Tensor:
    """Select entries of ``a`` along ``axis`` (embedding lookup, top-k gather)."""
    index = np.asarray(index, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.ndim
        sl[axis] = index
        np.add.at(full, tuple(sl), g)
        return (full,)
    return _node(np.take(a.data, index, axis=axis), (a,), bw, "gather")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)
    return _node(out, (a,), lambda g: (_unbroadcast(np.where(mask, 0.0, g), a.shape),), "masked_fill")


# -- reductions -------------------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _node(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def amax(a: Tensor, axis: int = -1) -> Tensor:
    """Max over one axis; the gradient flows to the first maximal entry."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)
    return _node(out, (a,), bw, "max")


# -- losses -----------------------------------------------------------------
def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood of integer ``targets`` under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(len(targets))
    out = -logp[rows, targets]

    def bw(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * g[:, None],)
    return _node(out, (logits,), bw, "cross_entropy")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy of sigmoid(logits) against {0,1} targets."""
    t = np.asarray(targets, dtype=logits.dtype)
    x = logits.data
    out = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return _node(out, (logits,), lambda g: (g * (_sigmoid(x) - t),), "bce")
