"""RSign, attention binarizer and weight binarizer with straight-through rules.

The plain ``*_forward`` / ``*_backward`` functions work on numpy arrays and
implement the closed-form rules. ``rsign``, ``att_binarize`` and
``binarize_weight`` record the same rules onto the autograd tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Parameter, Tensor, record, register
from .bitcore import ChannelScale, PackedBitMatrix, pack

A_MIN = 1e-4
_SURROGATE: list[bool] = []


class surrogate_forward:
    """Inside this block the tape binarizers emit the smooth functions whose
    derivatives their backward rules are (at scale a = 1), so finite
    differences can check gradient flow through them."""

    def __enter__(self):
        _SURROGATE.append(True)
        return self

    def __exit__(self, *exc):
        _SURROGATE.pop()
        return False


def sign_surrogate(u):
    """Piecewise polynomial approximation of sign with derivative 2 - 2|u|."""
    c = np.clip(u, -1, 1)
    return 2 * c - c * np.abs(c)


@dataclass
class BinarizerParams:
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"binarizer scale a must be > 0, got {self.a}")


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def rsign_forward(A, p: BinarizerParams):
    u = (np.asarray(A) - p.b) / p.a
    return np.where(u >= 0, 1.0, -1.0)


def rsign_backward(grad_out, A, p: BinarizerParams):
    u = (np.asarray(A) - p.b) / p.a
    d = np.where((u >= -1) & (u < 0), 2 + 2 * u, np.where((u >= 0) & (u < 1), 2 - 2 * u, 0))
    return grad_out * d


def att_binarize_forward(A_att, p: BinarizerParams):
    u = (np.asarray(A_att) - p.b) / p.a
    return p.a * np.clip(round_half_away(u), 0, 1)


def att_binarize_backward(grad_out, A_att, p: BinarizerParams):
    A_att = np.asarray(A_att)
    inside = (A_att >= p.b) & (A_att < p.a + p.b)
    return np.where(inside, p.a * grad_out, 0)


def weight_scale(W) -> np.ndarray:
    """Per-output-channel mean |W|; rows of ``W`` are output channels."""
    return np.abs(np.asarray(W)).mean(axis=1)


def weight_binarize(W) -> tuple[PackedBitMatrix, ChannelScale]:
    W = np.asarray(W)
    return pack(np.where(W >= 0, 1, -1)), ChannelScale(weight_scale(W))


def weight_binarize_backward(grad_out, W):
    W = np.asarray(W)
    return weight_scale(W)[:, None] * grad_out * (np.abs(W) < 1)


# ------------------------------------------------------------- tape ops
#
# Gradients for the learnable a and b follow the same surrogate the input
# gradient uses, on the branches where the input gradient is non-zero.

def _scalar(x):
    return float(x.data) if isinstance(x, Tensor) else float(x)


def rsign(x: Tensor, a, b) -> Tensor:
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    av, bv = _scalar(a), _scalar(b)
    u = (xd - bv) / av
    if _SURROGATE:
        out = sign_surrogate(u).astype(xd.dtype)
    else:
        out = np.greater_equal(u, 0).astype(xd.dtype)
        out *= 2
        out -= 1
    return record("rsign", (x, a, b), out, u=u)


@register("rsign")
def _rsign_bw(g, ctx):
    u = ctx["u"]
    # both polynomial branches equal 2 - 2|u| and reach 0 at |u| = 1
    d = np.abs(u)
    d *= -2
    d += 2
    np.maximum(d, 0, out=d)
    gx = g * d
    return gx, np.array(-(gx * u).sum()), np.array(-gx.sum())


def att_binarize(x: Tensor, a, b) -> Tensor:
    xd = x.data
    av, bv = _scalar(a), _scalar(b)
    u = (xd - bv) / av
    q = np.clip(round_half_away(u), 0, 1).astype(xd.dtype)
    inside = (xd >= bv) & (xd < av + bv)
    out = av * (np.clip(u, 0, 1).astype(xd.dtype) if _SURROGATE else q)
    return record("att_binarize", (x, a, b), out, q=q, u=u, inside=inside, a=av)


@register("att_binarize")
def _att_binarize_bw(g, ctx):
    inside, av = ctx["inside"], ctx["a"]
    gx = np.where(inside, av * g, 0).astype(g.dtype)
    ga = (g * (ctx["q"] - np.where(inside, ctx["u"], 0))).sum()
    return gx, np.array(ga), np.array(-gx.sum())


def binarize_weight(W: Tensor) -> Tensor:
    """Dense float view of the binarized weight, ``scale[k] * sign(W[k, :])``."""
    wd = W.data
    scale = np.abs(wd).mean(axis=1, keepdims=True)
    out = scale * np.where(wd >= 0, 1, -1).astype(wd.dtype)
    return record("binarize_weight", (W,), out, scale=scale, mask=np.abs(wd) < 1)


@register("binarize_weight")
def _binarize_weight_bw(g, ctx):
    return (ctx["scale"] * g * ctx["mask"],)


def clamp_scale(p: Parameter) -> None:
    np.maximum(p.data, A_MIN, out=p.data)
