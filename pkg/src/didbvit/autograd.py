"""Define-by-run reverse-mode autodiff over numpy arrays.

Every differentiable op registers a backward rule under a string id with
:func:`register`; :func:`record` appends a node to the active :class:`Tape`.
Outside a ``with Tape():`` block nothing is recorded, which is the inference
path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

RULES: dict[str, Callable] = {}
_ACTIVE: list["Tape"] = []
_SCOPE: list[str] = []


def register(op: str):
    """Decorator registering ``fn(grad_out, ctx) -> tuple of input grads``."""

    def deco(fn):
        if op in RULES:
            raise ValueError(f"backward rule for {op!r} already registered")
        RULES[op] = fn
        return fn

    return deco


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.name = name

    shape = property(lambda self: self.data.shape)
    dtype = property(lambda self: self.data.dtype)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __rtruediv__(self, o):
        return div(o, self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """Leaf tensor owned by a layer. Frozen parameters never receive gradients."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable: bool = True, name: str | None = None):
        super().__init__(np.array(data), requires_grad=trainable, name=name)
        self.trainable = trainable

    def zero_grad(self):
        self.grad = None


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    ctx: dict[str, Any] = field(default_factory=dict)
    tape: "Tape | None" = None
    scope: str = ""

    @property
    def rule(self) -> Callable:
        return RULES[self.op]


class Tape:
    """Ordered node list; ``backward`` walks it once, in reverse."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.sealed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def append(self, op, inputs, out, ctx) -> Node:
        if self.sealed:
            raise RuntimeError("cannot record onto a tape after backward() has started")
        node = Node(op, inputs, out, ctx, self, ".".join(_SCOPE))
        self.nodes.append(node)
        out.node = node
        return node

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self.sealed = True
        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            grads = node.rule(g, node.ctx)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                gi = _unbroadcast(np.asarray(gi), t.shape)
                if t.node is None:
                    t.grad = gi.astype(t.dtype, copy=True) if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    pending[key] = gi if key not in pending else pending[key] + gi
        if id(loss) in pending and loss.node is None and loss.requires_grad:
            loss.grad = pending.pop(id(loss))


class scope:
    """Label nodes recorded inside the block, e.g. ``with scope("blocks.0"):``."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        _SCOPE.append(self.name)
        return self

    def __exit__(self, *exc):
        _SCOPE.pop()
        return False


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(op: str, inputs: tuple, out_data, **ctx) -> Tensor:
    """Wrap ``out_data`` and, if a tape is active and any input needs a
    gradient, append a node whose backward is ``RULES[op]``."""
    if op not in RULES:
        raise KeyError(f"no backward rule registered for {op!r}")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.append(op, inputs, out, ctx)
    return out


def backward(loss: Tensor) -> None:
    if loss.node is None:
        raise RuntimeError("loss was not recorded on a tape")
    loss.node.tape.backward(loss)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _d(x):
    return x.data if isinstance(x, Tensor) else x


# ---------------------------------------------------------------- basic ops

def add(a, b) -> Tensor:
    return record("add", (a, b), _d(a) + _d(b))


@register("add")
def _add_bw(g, ctx):
    return g, g


def sub(a, b) -> Tensor:
    return record("sub", (a, b), _d(a) - _d(b))


@register("sub")
def _sub_bw(g, ctx):
    return g, -g


def mul(a, b) -> Tensor:
    return record("mul", (a, b), _d(a) * _d(b), a=_d(a), b=_d(b))


@register("mul")
def _mul_bw(g, ctx):
    return g * ctx["b"], g * ctx["a"]


def div(a, b) -> Tensor:
    return record("div", (a, b), _d(a) / _d(b), a=_d(a), b=_d(b))


@register("div")
def _div_bw(g, ctx):
    b = ctx["b"]
    return g / b, -g * ctx["a"] / (b * b)


def matmul(a, b) -> Tensor:
    return record("matmul", (a, b), np.matmul(_d(a), _d(b)), a=_d(a), b=_d(b))


@register("matmul")
def _matmul_bw(g, ctx):
    a, b = ctx["a"], ctx["b"]
    if b.ndim == 1:  # matrix-vector: treat b as one column
        return g[..., None] * b, np.tensordot(a, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
    return np.matmul(g, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), g)


def reshape(a: Tensor, shape) -> Tensor:
    return record("reshape", (a,), _d(a).reshape(shape), shape=_d(a).shape)


@register("reshape")
def _reshape_bw(g, ctx):
    return (g.reshape(ctx["shape"]),)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(_d(a).ndim)))
    return record("transpose", (a,), np.transpose(_d(a), axes), axes=axes)


@register("transpose")
def _transpose_bw(g, ctx):
    return (np.transpose(g, np.argsort(ctx["axes"])),)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _d(a)
    return record("sum", (a,), x.sum(axis=axis, keepdims=keepdims), shape=x.shape, axis=axis, keepdims=keepdims)


@register("sum")
def _sum_bw(g, ctx):
    if ctx["axis"] is not None and not ctx["keepdims"]:
        g = np.expand_dims(g, ctx["axis"])
    return (np.broadcast_to(g, ctx["shape"]),)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _d(a)
    count = x.size if axis is None else int(np.prod([x.shape[i] for i in np.atleast_1d(axis)]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def concat(tensors, axis=-1) -> Tensor:
    data = [_d(t) for t in tensors]
    sizes = [d.shape[axis] for d in data]
    return record("concat", tuple(tensors), np.concatenate(data, axis=axis), axis=axis, sizes=sizes)


@register("concat")
def _concat_bw(g, ctx):
    cuts = np.cumsum(ctx["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=ctx["axis"]))


def exp(a: Tensor) -> Tensor:
    y = np.exp(_d(a))
    return record("exp", (a,), y, y=y)


@register("exp")
def _exp_bw(g, ctx):
    return (g * ctx["y"],)


def log(a: Tensor) -> Tensor:
    return record("log", (a,), np.log(_d(a)), x=_d(a))


@register("log")
def _log_bw(g, ctx):
    return (g / ctx["x"],)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(_d(a))
    return record("tanh", (a,), y, y=y)


@register("tanh")
def _tanh_bw(g, ctx):
    return (g * (1 - ctx["y"] ** 2),)


def gelu(a: Tensor) -> Tensor:
    x = _d(a)
    c = np.sqrt(2 / np.pi).astype(x.dtype)
    u = c * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    return record("gelu", (a,), 0.5 * x * (1 + t), x=x, t=t, c=c)


@register("gelu")
def _gelu_bw(g, ctx):
    x, t, c = ctx["x"], ctx["t"], ctx["c"]
    du = c * (1 + 3 * 0.044715 * x ** 2)
    return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * du),)


def softmax(a: Tensor, axis=-1) -> Tensor:
    x = _d(a)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)
    return record("softmax", (a,), y, y=y, axis=axis)


@register("softmax")
def _softmax_bw(g, ctx):
    y, ax = ctx["y"], ctx["axis"]
    return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    x = _d(a)
    s = x - x.max(axis=axis, keepdims=True)
    y = s - np.log(np.exp(s).sum(axis=axis, keepdims=True))
    return record("log_softmax", (a,), y, y=y, axis=axis)


@register("log_softmax")
def _log_softmax_bw(g, ctx):
    y, ax = ctx["y"], ctx["axis"]
    return (g - np.exp(y) * g.sum(axis=ax, keepdims=True),)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """LayerNorm over the last axis with affine weight and bias."""
    xd = _d(x)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * _d(weight) + _d(bias)
    return record("layer_norm", (x, weight, bias), out, xhat=xhat, inv=inv, w=_d(weight))


@register("layer_norm")
def _layer_norm_bw(g, ctx):
    xhat, inv, w = ctx["xhat"], ctx["inv"], ctx["w"]
    gh = g * w
    gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    lead = tuple(range(g.ndim - 1))
    return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    n, k = _d(logits).shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {n} integers in [0, {k})")
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros((n, k), dtype=_d(logits).dtype)
    onehot[np.arange(n), labels] = 1
    return -(logp * onehot).sum() * (1.0 / n)
