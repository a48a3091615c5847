"""Minimal module system and the linear / norm layers built on the tape."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .binarize import binarize_weight, rsign, weight_binarize
from .bitcore import binary_matmul, pack


class Module:
    def named_parameters(self, prefix: str = ""):
        for name, v in vars(self).items():
            if isinstance(v, Parameter):
                yield prefix + name, v
            elif isinstance(v, Module):
                yield from v.named_parameters(f"{prefix}{name}.")
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self, trainable_only: bool = False) -> list[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def scalar(value: float, dtype=np.float32, trainable: bool = True) -> Parameter:
    return Parameter(np.array(value, dtype=dtype), trainable=trainable)


class Linear(Module):
    """Full-precision affine layer, ``x @ W.T + bias``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter((rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)).astype(dtype))
        self.bias = Parameter(np.zeros(d_out, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ ag.transpose(self.weight) + self.bias


class BinaryLinear(Module):
    """RSign on the input, mean-|W| scaled sign weights, no bias."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter((rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)).astype(dtype))
        self.act_a = scalar(1.0, dtype)
        self.act_b = scalar(0.0, dtype)
        self.d_out = d_out

    def __call__(self, x: Tensor, packed: bool = False) -> Tensor:
        if packed and ag.active_tape() is None:
            return Tensor(self.packed_forward(x.data))
        xb = rsign(x, self.act_a, self.act_b)
        return xb @ ag.transpose(binarize_weight(self.weight))

    def packed_forward(self, x: np.ndarray) -> np.ndarray:
        """Same output through the XNOR-popcount kernel."""
        lead = x.shape[:-1]
        u = (x.reshape(-1, x.shape[-1]) - self.act_b.data) / self.act_a.data
        signs = np.where(u >= 0, 1, -1).astype(np.int8)
        wpack, scale = weight_binarize(self.weight.data)
        out = binary_matmul(pack(signs), wpack, scale)
        return out.astype(x.dtype).reshape(lead + (self.d_out,))


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.weight = Parameter(np.ones(dim, dtype))
        self.bias = Parameter(np.zeros(dim, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.weight, self.bias)
