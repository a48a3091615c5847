"""Gradient checks for every registered backward rule.

Smooth ops are compared with central finite differences. The straight-through
binarizers have backward rules that are not derivatives of their forward, so
they are compared against independent closed-form array implementations
instead. The attention suite runs one full binary attention block in
surrogate-forward mode, where the binarizers become the smooth functions
their rules differentiate, and checks the block end to end.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .activations import IRPReLUParams, irprelu, irprelu_backward, irprelu_forward
from .autograd import Parameter, Tensor
from .binarize import (BinarizerParams, att_binarize, att_binarize_backward, binarize_weight,
                       rsign, rsign_backward, surrogate_forward, weight_binarize_backward)
from .grid import HAAR_HIGH, HAAR_LOW, NEIGHBORHOOD_3X3, grid_stencil
from .model import Attention, ModelConfig

EPS = 1e-4
FD_TOL = 1e-3
ACT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        return f"{status} {self.name} err={self.error:.3e} tol={self.tol:.0e}{extra}"


@dataclass
class Suite:
    name: str
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def rel_error(analytic, numeric) -> float:
    """Max-norm error relative to the max-norm of the numeric gradient."""
    analytic, numeric = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    scale = max(np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x``, perturbed in place."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * eps)
    return g


def tape_grads(build, leaves: list[Tensor], weights: np.ndarray):
    """Gradients of ``sum(build() * weights)`` for each leaf."""
    for t in leaves:
        t.grad = None
    with ag.Tape():
        out = build()
        loss = (out * weights).sum()
        ag.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]


def check_fd(name: str, build, leaves: list[Tensor], rng, tol: float = FD_TOL, eps: float = EPS) -> CheckResult:
    weights = rng.standard_normal(np.shape(build().data))

    def f():
        return float((build().data * weights).sum())

    grads = tape_grads(build, leaves, weights)
    err = max(rel_error(g, numeric_grad(f, t.data, eps)) for g, t in zip(grads, leaves))
    return CheckResult(name, err, tol)


# ------------------------------------------------------------ op suite

def _leaf(rng, *shape, low=None):
    data = rng.standard_normal(shape)
    if low is not None:
        data = low + np.abs(data)
    return Tensor(data, requires_grad=True)


def _op_cases(rng):
    """(name, leaves, build) for every smooth op, on float64 inputs."""
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    m1, m2 = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5)
    bb = _leaf(rng, 4)
    pos = _leaf(rng, 3, 4, low=0.5)
    x = _leaf(rng, 2, 3, 6)
    w, bias = _leaf(rng, 6), _leaf(rng, 6)
    logits = _leaf(rng, 5, 4)
    labels = rng.integers(0, 4, 5)
    g = _leaf(rng, 2, 9, 3)
    kx = _leaf(rng, 5, 3)
    km, kn, kk, kt = _leaf(rng, 3), _leaf(rng, 3), _leaf(rng, 3), _leaf(rng, 5)
    return [
        ("add", [a, bb], lambda: a + bb),
        ("sub", [a, b], lambda: a - b),
        ("mul", [a, b], lambda: a * b),
        ("div", [a, pos], lambda: a / pos),
        ("matmul", [m1, m2], lambda: m1 @ m2),
        ("reshape", [a], lambda: a.reshape(4, 3)),
        ("transpose", [m1], lambda: m1.transpose(2, 0, 1)),
        ("sum", [m1], lambda: m1.sum(axis=1)),
        ("mean", [m1], lambda: m1.mean(axis=(0, 2))),
        ("concat", [a, b], lambda: ag.concat([a, b, a], axis=-1)),
        ("exp", [a], lambda: ag.exp(a)),
        ("log", [pos], lambda: ag.log(pos)),
        ("tanh", [a], lambda: ag.tanh(a)),
        ("gelu", [a], lambda: ag.gelu(a)),
        ("softmax", [m1], lambda: ag.softmax(m1)),
        ("log_softmax", [m1], lambda: ag.log_softmax(m1)),
        ("layer_norm", [x, w, bias], lambda: ag.layer_norm(x, w, bias)),
        ("cross_entropy", [logits], lambda: ag.cross_entropy(logits, labels)),
        ("haar_low", [g], lambda: grid_stencil(g, 3, 3, HAAR_LOW)),
        ("haar_high", [g], lambda: grid_stencil(g, 3, 3, HAAR_HIGH)),
        ("neighborhood", [g], lambda: grid_stencil(g, 3, 3, NEIGHBORHOOD_3X3)),
        ("irprelu", [kx, km, kn, kk, kt], lambda: irprelu(kx, km, kn, kk, kt)),
    ]


def _away_from_kinks(kx, km, margin=1e-2):
    return np.all(np.abs(kx.data - km.data) >= margin)


def op_suite(points: int = 100, seed: int = 0) -> Suite:
    """Every smooth op at ``points`` random inputs; reports the worst error."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for _ in range(points):
        cases = _op_cases(rng)
        for name, leaves, build in cases:
            if name == "irprelu" and not _away_from_kinks(leaves[0], leaves[1]):
                continue
            r = check_fd(name, build, leaves, rng)
            worst[name] = max(worst.get(name, 0.0), r.error)
    return Suite("ops", [CheckResult(f"ops.{n}", e, FD_TOL, f"points={points}") for n, e in worst.items()])


# ------------------------------------------------------------ binarizers

def binarize_suite(points: int = 100_000, seed: int = 0) -> Suite:
    """Tape rules of the straight-through binarizers against the closed forms."""
    rng = np.random.default_rng(seed)
    out = Suite("binarize")
    x = rng.uniform(-3, 3, points)
    g = rng.standard_normal(points)
    a, b = float(rng.uniform(0.25, 2.0)), float(rng.uniform(-0.5, 0.5))
    p = BinarizerParams(a, b)

    def tape_input_grad(fn, xs, *args):
        t = Tensor(xs, requires_grad=True)
        tape_grads(lambda: fn(t, *args), [t], g.reshape(xs.shape))
        return t.grad

    gx = tape_input_grad(rsign, x, a, b)
    err = np.abs(gx - rsign_backward(g, x, p)).max()
    out.results.append(CheckResult("binarize.rsign", float(err), 0.0))

    att = rng.uniform(0, a + 1.0, points)
    gx = tape_input_grad(att_binarize, att, a, b)
    err = np.abs(gx - att_binarize_backward(g, att, p)).max()
    out.results.append(CheckResult("binarize.attention", float(err), 0.0))

    W = rng.uniform(-1.5, 1.5, (points // 100, 100))
    gw = g[:W.size].reshape(W.shape)
    t = Parameter(W)
    tape_grads(lambda: binarize_weight(t), [t], gw)
    err = np.abs(t.grad - weight_binarize_backward(gw, W)).max()
    out.results.append(CheckResult("binarize.weight", float(err), 0.0))
    return out


# ------------------------------------------------------------ activations

def activation_suite(points: int = 100, seed: int = 0, channels: int = 4, tokens: int = 6) -> Suite:
    """Array-level activation gradients against finite differences, at points
    at least 1e-2 away from the branch switch."""
    rng = np.random.default_rng(seed)
    names = ("X", "m", "n", "k", "t")
    worst = dict.fromkeys(names, 0.0)
    done = 0
    while done < points:
        p = IRPReLUParams(rng.standard_normal(channels), rng.standard_normal(channels),
                          rng.uniform(0.05, 1.0, channels), rng.standard_normal(tokens))
        X = rng.standard_normal((channels, tokens))
        if np.abs(X - p.m[:, None]).min() < 1e-2:
            continue
        done += 1
        G = rng.standard_normal(X.shape)
        analytic = irprelu_backward(G, X, p)
        arrays = (X, p.m, p.n, p.k, p.t)
        def f():
            return float((irprelu_forward(X, p) * G).sum())

        for name, arr, ga in zip(names, arrays, analytic):
            worst[name] = max(worst[name], rel_error(ga, numeric_grad(f, arr)))
    return Suite("activations", [CheckResult(f"activations.{n}", e, ACT_TOL, f"points={points}")
                                 for n, e in worst.items()])


# ------------------------------------------------------------ attention block

def attention_block(tokens: int = 16, channels: int = 8, heads: int = 1,
                    seed: int = 0) -> tuple[Attention, ModelConfig]:
    """A float64 HFSC + DIBA attention block on a square token grid."""
    side = int(round(np.sqrt(tokens)))
    if side * side != tokens:
        raise ValueError(f"{tokens} tokens do not form a square grid")
    cfg = ModelConfig(image_size=side * 4, patch_size=4, dim=channels, heads=heads, depth=1,
                      use_diba=True, use_hfsc=True, seed=seed)
    attn = Attention(cfg, np.random.default_rng(seed))
    for _, prm in attn.named_parameters():
        prm.data = prm.data.astype(np.float64)
    return attn, cfg


def smooth_input(attn: Attention, cfg: ModelConfig, rng, batch: int = 1, margin: float = 1e-3,
                 tries: int = 200) -> np.ndarray:
    """Draw an input and move the attention threshold into the widest gap of
    the upper half of its attention values, so that every entry is at least
    ``margin`` from the threshold and the block is smooth around the input."""
    for _ in range(tries):
        x = rng.standard_normal((batch, cfg.tokens, cfg.dim))
        with surrogate_forward():
            attn(Tensor(x))
        vals = np.sort(attn.last_pre_attention.ravel())
        upper = vals[len(vals) // 2:]
        gaps = np.diff(upper)
        j = int(np.argmax(gaps))
        if gaps[j] >= 2 * margin:
            attn.att_b.data[...] = 0.5 * (upper[j] + upper[j + 1])
            return x
    raise RuntimeError("no smooth input found")


def attention_suite(points: int = 3, seed: int = 0, batch: int = 1, margin: float = 1e-3) -> Suite:
    """End-to-end gradient of one binary attention block, and the split of
    the input gradient into value, query and key paths."""
    rng = np.random.default_rng(seed)
    out = Suite("attention")
    worst = worst_split = 0.0
    path_norms = np.full(3, np.inf)
    for i in range(points):
        attn, cfg = attention_block(seed=seed + i)
        x = Tensor(smooth_input(attn, cfg, rng, batch, margin), requires_grad=True)
        # straight-through weights and the attention scale are exempt
        params = [p for n, p in attn.named_parameters()
                  if p.trainable and not n.endswith("weight") and n != "att_a"]
        weights = rng.standard_normal(x.shape)
        with surrogate_forward():
            r = check_fd("block", lambda: attn(x), [x] + params, np.random.default_rng(i))
            full = tape_grads(lambda: attn(x), [x], weights)[0]
            parts = []
            for which in range(3):
                xs = [Tensor(x.data) for _ in range(3)]
                xs[which] = x
                parts.append(tape_grads(lambda: attn.forward_paths(*xs), [x], weights)[0])
        worst = max(worst, r.error)
        path_norms = np.minimum(path_norms, [np.abs(p).max() for p in parts])
        worst_split = max(worst_split, rel_error(sum(parts), full))
    out.results.append(CheckResult("attention.block", worst, FD_TOL, f"points={points}"))
    # every path must carry gradient, and together they must give the total
    split_err = worst_split if path_norms.min() > 0 else np.inf
    out.results.append(CheckResult("attention.paths", split_err, 1e-12,
                                   "min max|grad| v={:.2e} q={:.2e} k={:.2e}".format(*path_norms)))
    return out


SUITES = {
    "binarize": binarize_suite,
    "activations": activation_suite,
    "ops": op_suite,
    "attention": attention_suite,
}


def run(filter_name: str | None = None) -> list[Suite]:
    names = [n for n in SUITES if filter_name is None or filter_name in n]
    if not names:
        raise KeyError(f"no gradient suite matches {filter_name!r}; have {', '.join(SUITES)}")
    return [SUITES[n]() for n in names]
