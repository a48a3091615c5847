"""PReLU, RPReLU and RPReLU with a per-token shift.

Inputs are laid out channels x tokens (C x N) for the array functions. The
tape op :func:`irprelu` takes token-major activations ``(..., N, C)`` as they
flow through the model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, record, register


@dataclass
class IRPReLUParams:
    m: np.ndarray  # (C,) threshold shift
    n: np.ndarray  # (C,) output shift
    k: np.ndarray  # (C,) negative slope
    t: np.ndarray  # (N,) token shift

    @classmethod
    def init(cls, channels: int, tokens: int, dtype=np.float32) -> "IRPReLUParams":
        z = np.zeros(channels, dtype)
        return cls(z.copy(), z.copy(), np.full(channels, 0.25, dtype), np.zeros(tokens, dtype))

    def __post_init__(self):
        c = len(self.m)
        if len(self.n) != c or len(self.k) != c:
            raise ValueError("m, n and k must all have one entry per channel")
        for v in (self.m, self.n, self.k, self.t):
            if not np.all(np.isfinite(v)):
                raise ValueError("activation parameters must be finite")


def _check(X, p: IRPReLUParams):
    X = np.asarray(X)
    if X.ndim != 2 or X.shape != (len(p.m), len(p.t)):
        raise ValueError(f"input shape {X.shape} does not match (C, N) = ({len(p.m)}, {len(p.t)})")
    return X


def irprelu_forward(X, p: IRPReLUParams):
    X = _check(X, p)
    d = X - p.m[:, None]
    # X == m takes the positive branch
    return np.where(d >= 0, d, p.k[:, None] * d) + p.n[:, None] + p.t[None, :]


def irprelu_backward(grad_out, X, p: IRPReLUParams):
    """Returns ``(gradX, grad_m, grad_n, grad_k, grad_t)``."""
    X = _check(X, p)
    g = np.asarray(grad_out)
    if g.shape != X.shape:
        raise ValueError("gradient shape does not match input shape")
    d = X - p.m[:, None]
    pos = d >= 0
    slope = np.where(pos, 1.0, p.k[:, None])
    gx = g * slope
    return gx, -gx.sum(axis=1), g.sum(axis=1), np.where(pos, 0.0, g * d).sum(axis=1), g.sum(axis=0)


def rprelu_forward(X, m, n, k):
    X = np.asarray(X)
    d = X - np.asarray(m)[:, None]
    return np.where(d >= 0, d, np.asarray(k)[:, None] * d) + np.asarray(n)[:, None]


def prelu_forward(X, k):
    X = np.asarray(X)
    return np.where(X >= 0, X, np.asarray(k)[:, None] * X)


def irprelu(x: Tensor, m: Tensor, n: Tensor, k: Tensor, t: Tensor | None = None) -> Tensor:
    """Token-major activation: ``x`` is ``(..., N, C)``, ``m, n, k`` are ``(C,)``,
    ``t`` is ``(N,)``. With ``t=None`` this is plain RPReLU."""
    d = x.data - m.data
    neg = d < 0
    slope = np.where(neg, k.data, np.ones_like(k.data))
    out = d * slope
    out += n.data
    if t is not None:
        out += t.data[:, None]
    inputs = (x, m, n, k) if t is None else (x, m, n, k, t)
    return record("irprelu", inputs, out, negd=d * neg, slope=slope, has_t=t is not None)


@register("irprelu")
def _irprelu_bw(g, ctx):
    gx = g * ctx["slope"]
    lead = tuple(range(g.ndim - 1))
    grads = [gx, -gx.sum(axis=lead), g.sum(axis=lead), (g * ctx["negd"]).sum(axis=lead)]
    if ctx["has_t"]:
        grads.append(g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))
    return tuple(grads)
