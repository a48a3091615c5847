"""Analytic operation counts for a model configuration.

Binary multiply-accumulates (BOPs) are the +/-1 GEMMs inside transformer
blocks; float ops (FLOPs) are the full-precision patch embedding, classifier
head and the per-token float work the attention variants add. The combined
figure is ``OPs = BOPs / 64 + FLOPs``. Nothing here is measured.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import ModelConfig


@dataclass(frozen=True)
class OpCount:
    bops: int
    flops: int

    @property
    def ops(self) -> float:
        return self.bops / 64 + self.flops

    def as_fields(self) -> dict[str, float]:
        return {"bops": self.bops, "flops": self.flops, "ops": self.ops}


def block_bops(cfg: ModelConfig) -> int:
    n, c, r = cfg.tokens, cfg.dim, cfg.mlp_ratio
    qkvo = 4 * n * c * c            # q, k, v and output projections
    attention = 2 * n * n * c       # Q K^T and A V
    mlp = 2 * r * n * c * c         # fc1 and fc2
    total = qkvo + attention + mlp
    if cfg.use_diba:
        total += 9 * n * c          # 3x3 neighbourhood sum of binarized values
    return total


def block_flops(cfg: ModelConfig) -> int:
    n, c = cfg.tokens, cfg.dim
    total = 0
    if cfg.use_diba:
        total += n * c              # beta-scaled value shortcut
    if cfg.use_hfsc:
        total += 8 * n * c          # low and high Haar stencils, four taps each
    return total


def count(cfg: ModelConfig) -> OpCount:
    if not cfg.binary:
        raise ValueError("op accounting is defined for the binary model only")
    patch_dim = cfg.in_channels * cfg.patch_size ** 2
    embed = cfg.tokens * patch_dim * cfg.dim
    head = cfg.dim * cfg.classes
    return OpCount(cfg.depth * block_bops(cfg), embed + head + cfg.depth * block_flops(cfg))
