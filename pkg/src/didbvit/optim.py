"""AdamW with decoupled weight decay, and the cosine learning-rate schedule."""
from __future__ import annotations

import math

import numpy as np

from .autograd import Parameter


def cosine_lr(step: int, total: int, lr0: float) -> float:
    """Cosine annealing from ``lr0`` at step 0 to 0 at step ``total``."""
    if lr0 <= 0:
        raise ValueError(f"initial learning rate must be > 0, got {lr0}")
    if total <= 0:
        raise ValueError("total steps must be positive")
    step = min(max(step, 0), total)
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total))


def adamw_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
               lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One in-place AdamW update at step ``t`` (1-based)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    b1, b2 = betas
    param *= 1.0 - lr * weight_decay
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """Optimizer over named parameters; matrices get weight decay, scalars and
    vectors do not. ``floors`` maps parameter names to a minimum value that is
    enforced after every step."""

    def __init__(self, named_params, lr: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.05, floors: dict[str, float] | None = None):
        self.params: dict[str, Parameter] = {n: p for n, p in named_params if p.trainable}
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.floors = floors or {}
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            wd = self.weight_decay if p.data.ndim >= 2 else 0.0
            adamw_step(p.data, p.grad.astype(p.data.dtype), self.m[name], self.v[name], self.t,
                       lr, self.betas, self.eps, wd)
            if name in self.floors:
                np.maximum(p.data, self.floors[name], out=p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"opt.m.{n}": a for n, a in self.m.items()}
        out.update({f"opt.v.{n}": a for n, a in self.v.items()})
        out["opt.t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for n in self.params:
            self.m[n][...] = tensors[f"opt.m.{n}"]
            self.v[n][...] = tensors[f"opt.v.{n}"]
        self.t = int(tensors["opt.t"][0])
