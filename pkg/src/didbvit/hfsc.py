"""Frequency-enhanced query/key construction and binary similarity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .binarize import BinarizerParams, att_binarize_forward, rsign_forward
from .bitcore import binary_matmul_int, pack
from .grid import HAAR_HIGH, HAAR_LOW, grid_stencil, stencil, to_image
from .layers import BinaryLinear, Module


@dataclass
class FreqPair:
    low: np.ndarray
    high: np.ndarray


def haar_decompose(X, height: int, width: int) -> FreqPair:
    """Non-subsampled diagonal Haar split of ``X`` shaped ``(..., H*W, C)``.

    low[i, j]  = X[i-1, j-1] + X[i-1, j+1] + X[i+1, j-1] + X[i+1, j+1]
    high[i, j] = X[i-1, j-1] + X[i+1, j+1] - X[i-1, j+1] - X[i+1, j-1]
    """
    X = np.asarray(X)
    img = to_image(X, height, width)
    return FreqPair(stencil(img, HAAR_LOW).reshape(X.shape), stencil(img, HAAR_HIGH).reshape(X.shape))


def haar_low(x: Tensor, height: int, width: int) -> Tensor:
    return grid_stencil(x, height, width, HAAR_LOW)


def haar_high(x: Tensor, height: int, width: int) -> Tensor:
    return grid_stencil(x, height, width, HAAR_HIGH)


class QKProjectors(Module):
    """Four half-width binary linear layers: low/high band for Q and for K."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        if channels % 2:
            raise ValueError(f"channel count {channels} must be even")
        half = channels // 2
        self.q_low = BinaryLinear(channels, half, rng, dtype)
        self.q_high = BinaryLinear(channels, half, rng, dtype)
        self.k_low = BinaryLinear(channels, half, rng, dtype)
        self.k_high = BinaryLinear(channels, half, rng, dtype)
        self.channels = channels


def build_qk(x: Tensor, proj: QKProjectors, height: int, width: int, packed: bool = False):
    """``Q_e = cat(BL_Q^L(X^L), BL_Q^H(X^H)) + X`` and likewise for ``K_e``."""
    if x.shape[-1] != proj.channels:
        raise ValueError(f"input has {x.shape[-1]} channels, projectors expect {proj.channels}")
    low, high = haar_low(x, height, width), haar_high(x, height, width)
    q = ag.concat([proj.q_low(low, packed), proj.q_high(high, packed)], axis=-1) + x
    k = ag.concat([proj.k_low(low, packed), proj.k_high(high, packed)], axis=-1) + x
    return q, k


def similarity(Qe, Ke, qparams: BinarizerParams, kparams: BinarizerParams) -> np.ndarray:
    """``B(Q_e) @ B(K_e).T`` through the packed XNOR-popcount kernel."""
    Qe, Ke = np.asarray(Qe), np.asarray(Ke)
    if Qe.ndim != 2 or Ke.ndim != 2 or Qe.shape[1] != Ke.shape[1]:
        raise ValueError(f"incompatible query/key shapes {Qe.shape} and {Ke.shape}")
    qb = rsign_forward(Qe, qparams).astype(np.int8)
    kb = rsign_forward(Ke, kparams).astype(np.int8)
    return binary_matmul_int(pack(qb), pack(kb))


def softmax_rows(S, c: int) -> np.ndarray:
    z = np.asarray(S, dtype=np.float64) / np.sqrt(c)
    z = np.exp(z - z.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def attention_from_similarity(S, c: int, params: BinarizerParams, binarize: bool = True) -> np.ndarray:
    A = softmax_rows(S, c)
    return att_binarize_forward(A, params) if binarize else A
