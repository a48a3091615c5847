"""Binary ViT with switchable attention, similarity and activation variants.

Layout: full-precision patch embedding, ``depth`` pre-norm blocks, final
LayerNorm, global average pooling over tokens (no class token) and a
full-precision classifier. Each binary linear layer carries a BiReal-style
shortcut from its input.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .activations import irprelu
from .autograd import Parameter, Tensor, scope
from .binarize import A_MIN, att_binarize, rsign
from .bitcore import binary_matmul_int, pack
from .diba import diba_output, plain_output
from .hfsc import QKProjectors, build_qk
from .layers import BinaryLinear, LayerNorm, Linear, Module, scalar

BINARIZER_OPS = ("rsign", "att_binarize", "binarize_weight")
SHAPE_OPS = ("reshape", "transpose")


@dataclass
class ModelConfig:
    image_size: int = 32
    patch_size: int = 8
    in_channels: int = 3
    dim: int = 64
    heads: int = 4
    depth: int = 2
    mlp_ratio: int = 4
    classes: int = 10
    use_diba: bool = True
    use_hfsc: bool = True
    use_irprelu: bool = True
    two_stage: bool = False
    binary: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.image_size % self.patch_size:
            raise ValueError(f"image size {self.image_size} is not a multiple of patch size {self.patch_size}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by {self.heads} heads")
        if self.dim % 2:
            raise ValueError(f"dim {self.dim} must be even")
        if self.two_stage:
            raise ValueError("two-stage training is not supported")
        for name in ("image_size", "patch_size", "in_channels", "dim", "heads", "depth", "mlp_ratio", "classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid ** 2

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def variant(self, **flags) -> "ModelConfig":
        d = asdict(self)
        d.update(flags)
        return ModelConfig(**d)

    def to_lines(self) -> list[str]:
        return [f"{f.name}={_fmt(getattr(self, f.name))}" for f in fields(self)]

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in kv.items():
            if key not in known:
                continue
            kwargs[key] = _parse_bool(raw) if known[key] in (bool, "bool") else int(raw)
        return cls(**kwargs)


def _fmt(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, c = x.shape
    return x.reshape(b, n, heads, c // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)


class Attention(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.dim
        self.cfg = cfg
        if not cfg.binary:
            self.q, self.k, self.v, self.proj = (Linear(c, c, rng) for _ in range(4))
            return
        if cfg.use_hfsc:
            self.qk = QKProjectors(c, rng)
        else:
            self.q = BinaryLinear(c, c, rng)
            self.k = BinaryLinear(c, c, rng)
        self.v = BinaryLinear(c, c, rng)
        self.proj = BinaryLinear(c, c, rng)
        self.q_a, self.q_b = scalar(1.0), scalar(0.0)
        self.k_a, self.k_b = scalar(1.0), scalar(0.0)
        self.v_a, self.v_b = scalar(1.0), scalar(0.0)
        self.att_a, self.att_b = scalar(1.0), scalar(0.5)
        if cfg.use_diba:
            self.alpha = scalar(1.0)
            self.beta = scalar(9.0)
            self.gamma = scalar(1.0)
            self.kernel = Parameter(np.ones((3, 3), np.float32), trainable=False)
        self.last_attention = self.last_pre_attention = None

    def __call__(self, x: Tensor, packed: bool = False) -> Tensor:
        return self.forward_paths(x, x, x, packed)

    def forward_paths(self, xv: Tensor, xq: Tensor, xk: Tensor, packed: bool = False) -> Tensor:
        """Attention with separate inputs feeding the value, query and key
        branches; the shortcut around the output projection follows ``xv``.
        Passing one tensor three times is the ordinary forward."""
        cfg = self.cfg
        h, g = cfg.heads, cfg.grid
        if not cfg.binary:
            q, k, v = (_split_heads(f(t), h) for f, t in ((self.q, xq), (self.k, xk), (self.v, xv)))
            att = ag.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(cfg.head_dim)))
            return self.proj(_merge_heads(att @ v))

        v = self.v(xv, packed) + xv
        if cfg.use_hfsc and xq is xk:
            q, k = build_qk(xq, self.qk, g, g, packed)
        elif cfg.use_hfsc:
            q = build_qk(xq, self.qk, g, g, packed)[0]
            k = build_qk(xk, self.qk, g, g, packed)[1]
        else:
            q = self.q(xq, packed) + xq
            k = self.k(xk, packed) + xk
        q, k, v = (_split_heads(t, h) for t in (q, k, v))
        qb = rsign(q, self.q_a, self.q_b)
        kb = rsign(k, self.k_a, self.k_b)
        if packed and ag.active_tape() is None:
            s = Tensor(_packed_scores(qb.data, kb.data))
        else:
            s = qb @ kb.transpose(0, 1, 3, 2)
        att = ag.softmax(s * (1.0 / math.sqrt(cfg.head_dim)))
        self.last_pre_attention = att.data
        a_bin = att_binarize(att, self.att_a, self.att_b)
        self.last_attention = a_bin.data / float(self.att_a.data)
        vb = rsign(v, self.v_a, self.v_b)
        if cfg.use_diba:
            o = diba_output(v, vb, a_bin, self.att_a, self.alpha, self.beta, self.gamma,
                            self.kernel, g, g)
        else:
            o = plain_output(vb, a_bin)
        o = _merge_heads(o)
        return self.proj(o, packed) + o


def _packed_scores(qb: np.ndarray, kb: np.ndarray) -> np.ndarray:
    lead = qb.shape[:-2]
    n = qb.shape[-2]
    qf = qb.reshape((-1,) + qb.shape[-2:]).astype(np.int8)
    kf = kb.reshape((-1,) + kb.shape[-2:]).astype(np.int8)
    out = np.stack([binary_matmul_int(pack(a), pack(b)) for a, b in zip(qf, kf)])
    return out.astype(qb.dtype).reshape(lead + (n, n))


class Activation(Module):
    """RPReLU, or the per-token-shift variant when ``tokens`` is given."""

    def __init__(self, channels: int, tokens: int | None):
        self.m = Parameter(np.zeros(channels, np.float32))
        self.n = Parameter(np.zeros(channels, np.float32))
        self.k = Parameter(np.full(channels, 0.25, np.float32))
        if tokens is not None:
            self.t = Parameter(np.zeros(tokens, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return irprelu(x, self.m, self.n, self.k, getattr(self, "t", None))


class MLP(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c, hidden = cfg.dim, cfg.dim * cfg.mlp_ratio
        self.cfg = cfg
        if not cfg.binary:
            self.fc1, self.fc2 = Linear(c, hidden, rng), Linear(hidden, c, rng)
            return
        self.fc1 = BinaryLinear(c, hidden, rng)
        self.fc2 = BinaryLinear(hidden, c, rng)
        tokens = cfg.tokens if cfg.use_irprelu else None
        self.act1 = Activation(hidden, tokens)
        self.act2 = Activation(c, tokens)

    def __call__(self, x: Tensor, packed: bool = False) -> Tensor:
        cfg = self.cfg
        if not cfg.binary:
            return self.fc2(ag.gelu(self.fc1(x)))
        r = cfg.mlp_ratio
        h = self.act1(self.fc1(x, packed) + ag.concat([x] * r, axis=-1))
        b, n, _ = h.shape
        squeeze = h.reshape(b, n, r, cfg.dim).mean(axis=2)
        return self.act2(self.fc2(h, packed) + squeeze)


class Block(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.dim)
        self.attn = Attention(cfg, rng)
        self.norm2 = LayerNorm(cfg.dim)
        self.mlp = MLP(cfg, rng)

    def __call__(self, x: Tensor, packed: bool = False) -> Tensor:
        x = x + self.attn(self.norm1(x), packed)
        return x + self.mlp(self.norm2(x), packed)


class ViT(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        patch_dim = cfg.in_channels * cfg.patch_size ** 2
        self.embed = Linear(patch_dim, cfg.dim, rng)
        self.pos = Parameter((0.02 * rng.standard_normal((cfg.tokens, cfg.dim))).astype(np.float32))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim)
        self.head = Linear(cfg.dim, cfg.classes, rng)

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """``(B, C, H, W)`` -> ``(B, tokens, C*p*p)`` in row-major grid order."""
        cfg = self.cfg
        b = images.shape[0]
        if images.shape[1:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise ValueError(f"expected images of shape (B, {cfg.in_channels}, {cfg.image_size}, "
                             f"{cfg.image_size}), got {images.shape}")
        g, p = cfg.grid, cfg.patch_size
        x = images.reshape(b, cfg.in_channels, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(b, g * g, -1).astype(np.float32)

    def __call__(self, images: np.ndarray, packed: bool = False) -> Tensor:
        with scope("embed"):
            x = self.embed(Tensor(self.patchify(images))) + self.pos
        for i, blk in enumerate(self.blocks):
            with scope(f"blocks.{i}"):
                x = blk(x, packed)
        with scope("head"):
            return self.head(self.norm(x).mean(axis=1))

    def floors(self) -> dict[str, float]:
        """Lower bounds enforced after each update: binarizer scales stay
        positive, the DIBA path scales non-negative."""
        out = {}
        for n, _ in self.named_parameters():
            if n.endswith(("act_a", "q_a", "k_a", "v_a", "att_a")):
                out[n] = A_MIN
            elif n.endswith(("attn.alpha", "attn.gamma")):
                out[n] = 0.0
        return out

    def diba_layers(self) -> list[Attention]:
        return [b.attn for b in self.blocks if self.cfg.binary and self.cfg.use_diba]


def build(cfg: ModelConfig) -> ViT:
    return ViT(cfg)


def parameter_count(model: Module, trainable_only: bool = True) -> int:
    return sum(p.data.size for p in model.parameters(trainable_only))


def distillation_loss(student_logits: Tensor, teacher_logits, labels, lam: float = 0.9) -> Tensor:
    """``(1 - lam) * CE(student, labels) + lam * KL(teacher || student)`` at
    temperature 1, averaged over the batch."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    ce = ag.cross_entropy(student_logits, labels)
    if teacher_logits is None or lam == 0.0:
        return ce
    t = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits)
    t = t.astype(student_logits.dtype)
    t = t - t.max(axis=-1, keepdims=True)
    logpt = t - np.log(np.exp(t).sum(axis=-1, keepdims=True))
    pt = np.exp(logpt)
    n = student_logits.shape[0]
    entropy_term = float((pt * logpt).sum()) / n
    kl = entropy_term - (ag.log_softmax(student_logits) * pt).sum() * (1.0 / n)
    return (1.0 - lam) * ce + lam * kl


def audit_binarization(tape: ag.Tape) -> list[str]:
    """Names of matmul nodes inside transformer blocks whose operands do not
    come from a binarizer. An empty list means full coverage."""

    def origin(t):
        while isinstance(t, Tensor) and t.node is not None and t.node.op in SHAPE_OPS:
            t = t.node.inputs[0]
        return t.node.op if isinstance(t, Tensor) and t.node is not None else None

    bad = []
    for i, node in enumerate(tape.nodes):
        if node.op == "matmul" and node.scope.startswith("blocks"):
            ops = [origin(t) for t in node.inputs]
            if any(o not in BINARIZER_OPS for o in ops):
                bad.append(f"{node.scope}#{i}:{ops}")
    return bad
