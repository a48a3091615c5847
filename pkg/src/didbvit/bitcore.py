"""Bit-packed +/-1 matrices and XNOR-popcount linear algebra.

Encoding is fixed library-wide: bit 1 means +1, bit 0 means -1, bits are
LSB-first inside 64-bit words, and padding bits past ``cols`` are 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

WORD_BITS = 64


@dataclass(frozen=True)
class PackedBitMatrix:
    rows: int
    cols: int
    words_per_row: int
    data: np.ndarray  # uint64, rows * words_per_row

    def __post_init__(self):
        if self.words_per_row != -(-self.cols // WORD_BITS):
            raise ValueError("words_per_row must equal ceil(cols / 64)")
        if self.data.dtype != np.uint64 or self.data.size != self.rows * self.words_per_row:
            raise ValueError("data must be a uint64 array of rows * words_per_row words")
        self.data.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def words(self) -> np.ndarray:
        return self.data.reshape(self.rows, self.words_per_row)

    def row(self, i: int) -> np.ndarray:
        w = self.words_per_row
        return self.data[i * w:(i + 1) * w]


@dataclass(frozen=True)
class ChannelScale:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("channel scale must be one-dimensional")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("channel scale values must be finite and >= 0")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def pack(signs) -> PackedBitMatrix:
    """Pack a +/-1 matrix (or vector, treated as one row) into 64-bit words."""
    m = np.asarray(signs)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D sign matrix, got shape {m.shape}")
    bad = np.argwhere((m != 1) & (m != -1))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise ValueError(f"element at index {idx} is {m[idx]!r}, expected +1 or -1")
    rows, cols = m.shape
    wpr = -(-cols // WORD_BITS)
    bits = np.zeros((rows, wpr * WORD_BITS), dtype=np.uint8)
    bits[:, :cols] = m > 0
    # LSB-first: little bit order per byte, little-endian bytes per word
    packed = np.packbits(bits, axis=1, bitorder="little")
    data = packed.view("<u8").astype(np.uint64, copy=False).reshape(-1).copy()
    return PackedBitMatrix(rows, cols, wpr, data)


def unpack(pm: PackedBitMatrix) -> np.ndarray:
    """Inverse of :func:`pack`; returns an int8 matrix of +/-1."""
    raw = pm.words().astype("<u8").view(np.uint8).reshape(pm.rows, -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :pm.cols]
    return bits.astype(np.int8) * 2 - 1


@njit(cache=True, inline="always")
def _popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True)
def _dot_words(a, b, n):
    agree = 0
    for w in range(a.shape[0]):
        agree += _popcount64(~(a[w] ^ b[w]))
    # zero padding in both operands agrees with itself; remove it
    agree -= a.shape[0] * 64 - n
    return 2 * agree - n


@njit(cache=True, parallel=True)
def _gemm_core(a, w, n):
    m, words = a.shape
    p = w.shape[0]
    pad = words * 64 - n
    out = np.empty((m, p), dtype=np.int64)
    for i in prange(m):
        for k in range(p):
            agree = 0
            for t in range(words):
                agree += _popcount64(~(a[i, t] ^ w[k, t]))
            out[i, k] = 2 * (agree - pad) - n
    return out


def xnor_popcount_dot(a: np.ndarray, b: np.ndarray, n: int) -> int:
    """Dot product of two packed +/-1 rows of logical length ``n`` as 2*i - n."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape or a.size != -(-n // WORD_BITS):
        raise ValueError(f"packed rows of {a.size} and {b.size} words do not both hold {n} bits")
    return int(_dot_words(a, b, n))


def binary_matmul_int(a: PackedBitMatrix, w: PackedBitMatrix) -> np.ndarray:
    """Unscaled integer core: ``a @ w.T`` over +/-1 entries."""
    if a.cols != w.cols:
        raise ValueError(f"inner dimensions differ: {a.cols} vs {w.cols}")
    return _gemm_core(a.words(), w.words(), a.cols)


def binary_matmul(a: PackedBitMatrix, w: PackedBitMatrix, scale: ChannelScale | np.ndarray) -> np.ndarray:
    """Channel-scaled binary linear layer, ``scale[k] * (A_hat @ W_hat.T)[:, k]``."""
    if not isinstance(scale, ChannelScale):
        scale = ChannelScale(scale)
    if len(scale) != w.rows:
        raise ValueError(f"scale has {len(scale)} entries for {w.rows} output channels")
    return binary_matmul_int(a, w) * scale.values[None, :]


@njit(cache=True)
def naive_float_matmul(a, b):
    """Reference i-j-k triple loop, ``a @ b.T``; single thread, no blocking."""
    m, n = a.shape
    p = b.shape[0]
    out = np.zeros((m, p), dtype=a.dtype)
    for i in range(m):
        for k in range(p):
            acc = a[0, 0] * 0
            for j in range(n):
                acc += a[i, j] * b[k, j]
            out[i, k] = acc
    return out
