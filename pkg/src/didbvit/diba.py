"""Differential-informative binary attention.

The scalar update forms (direct weighted sum, differential form, and their
binarized counterparts) are kept as standalone functions so the algebraic
identities between them can be checked. :func:`diba_forward` and
:func:`diba_output` are the array and tape versions of the full update

    v_i <- beta * v_i + alpha * sum_{j in U} B(v_j) - gamma * sum_{l in 3x3} B(v_l)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .binarize import BinarizerParams, rsign_forward
from .grid import NEIGHBORHOOD_3X3, grid_stencil, stencil, to_image

ROW_SUM_TOL = 1e-6


@dataclass
class DibaParams:
    alpha: float = 1.0
    beta: float = 9.0
    gamma: float = 1.0
    neighborhood: np.ndarray = field(default_factory=lambda: np.ones((3, 3)))


def attn_update_direct(w, v) -> float:
    w, v = np.asarray(w), np.asarray(v)
    if w.shape != v.shape:
        raise ValueError(f"attention row length {w.size} != value length {v.size}")
    return float(np.dot(w, v))


def attn_update_differential(w, v, i: int, tol: float = ROW_SUM_TOL) -> float:
    """``v_i + sum_{j != i} w_j (v_j - v_i)``; needs a row summing to 1."""
    w, v = np.asarray(w, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if w.shape != v.shape:
        raise ValueError(f"attention row length {w.size} != value length {v.size}")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"attention row sums to {w.sum()!r}, expected 1")
    diff = v - v[i]
    diff[i] = 0.0
    return float(v[i] + np.dot(w, diff))


def binarized_update_plain(selected, v, i: int) -> float:
    v = np.asarray(v)
    return float(v[i] + sum(v[j] for j in set(selected) if j != i))


def binarized_update_differential(selected, v, i: int) -> float:
    """``(1 - k) v_i + sum_{j in U} v_j`` for the index set U of size k."""
    sel = sorted(set(selected))
    if i not in sel:
        raise ValueError(f"token {i} is not in its own surviving attention set")
    v = np.asarray(v)
    return float((1 - len(sel)) * v[i] + sum(v[j] for j in sel))


def binarized_update_differential_sum(selected, v, i: int) -> float:
    """Same quantity written as ``v_i + sum_{j in U} (v_j - v_i)``."""
    sel = sorted(set(selected))
    if i not in sel:
        raise ValueError(f"token {i} is not in its own surviving attention set")
    v = np.asarray(v)
    return float(v[i] + sum(v[j] - v[i] for j in sel))


def neighborhood_sum(vb, height: int, width: int, kernel=None) -> np.ndarray:
    """Depthwise 3x3 window sum with zero padding; ``vb`` is ``(..., H*W, C)``."""
    vb = np.asarray(vb)
    taps = NEIGHBORHOOD_3X3
    if kernel is not None:
        taps = {(di, dj): float(kernel[di + 1, dj + 1]) for (di, dj) in taps}
    return stencil(to_image(vb, height, width), taps).reshape(vb.shape)


def diba_forward(V, A_bin, a_att: float, params: DibaParams, vparams: BinarizerParams,
                 height: int, width: int) -> np.ndarray:
    """Array form for one head: ``V`` is ``(n, c)``, ``A_bin`` is ``(n, n)`` with
    entries in ``{0, a_att}``."""
    V = np.asarray(V)
    A_bin = np.asarray(A_bin)
    n = V.shape[-2]
    if A_bin.shape[-2:] != (n, n):
        raise ValueError(f"attention shape {A_bin.shape} does not match {n} tokens")
    vb = rsign_forward(V, vparams)
    attn = (A_bin / a_att) @ vb
    neg = neighborhood_sum(vb, height, width, params.neighborhood)
    return params.beta * V + params.alpha * attn - params.gamma * neg


def init_beta(binarized_rows) -> float:
    """``10 - mean_k`` where k is the number of ones per 0/1 attention row."""
    rows = np.asarray(binarized_rows)
    if rows.size == 0:
        raise ValueError("calibration batch is empty")
    k = (rows.reshape(-1, rows.shape[-1]) > 0).sum(axis=-1)
    return float(10.0 - k.mean())


def diba_output(v: Tensor, vb: Tensor, a_bin: Tensor, a_att, alpha: Tensor, beta: Tensor,
                gamma: Tensor, kernel: Parameter, height: int, width: int) -> Tensor:
    """Tape version over heads: ``v, vb`` are ``(B, h, N, d)``, ``a_bin`` is
    ``(B, h, N, N)``."""
    attn = (a_bin @ vb) / a_att
    neg = grid_stencil(vb, height, width, NEIGHBORHOOD_3X3, kernel=kernel)
    return beta * v + alpha * attn - gamma * neg


def plain_output(vb: Tensor, a_bin: Tensor) -> Tensor:
    return ag.matmul(a_bin, vb)
