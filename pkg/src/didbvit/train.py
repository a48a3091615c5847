"""Training loop, evaluation and the ablation ladder."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autograd as ag
from .data import Dataset
from .diba import init_beta
from .model import ModelConfig, ViT, build, distillation_loss
from .opcount import count
from .optim import AdamW, cosine_lr

METRIC_FIELDS = ("epoch", "step", "loss", "train_acc", "test_acc", "lr", "wall_s")

LADDER = (
    ("baseline", dict(use_diba=False, use_hfsc=False, use_irprelu=False)),
    ("+diba", dict(use_diba=True, use_hfsc=False, use_irprelu=False)),
    ("+diba+hfsc", dict(use_diba=True, use_hfsc=True, use_irprelu=False)),
    ("all", dict(use_diba=True, use_hfsc=True, use_irprelu=True)),
)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 100
    lr: float = 5e-4
    weight_decay: float = 0.05
    lam: float = 0.9
    teacher_epochs: int = 10
    teacher_lr: float = 1e-3

    def to_lines(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, raw in kv.items():
            if k in types:
                out[k] = float(raw) if types[k] in (float, "float") else int(raw)
        cfg = cls(**out)
        if cfg.epochs <= 0 or cfg.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if cfg.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {cfg.lr}")
        return cfg


@dataclass
class EpochRecord:
    epoch: int
    step: int
    loss: float
    train_acc: float
    test_acc: float
    lr: float
    wall_s: float

    def line(self) -> str:
        parts = []
        for name in METRIC_FIELDS:
            v = getattr(self, name)
            parts.append(f"{name}={v:.6g}" if isinstance(v, float) else f"{name}={v}")
        return " ".join(parts)


@dataclass
class RunReport:
    config: ModelConfig
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    wall_s: float = 0.0
    bops: int = 0
    flops: int = 0

    @property
    def ops(self) -> float:
        return self.bops / 64 + self.flops

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].test_acc if self.epochs else float("nan")


@dataclass
class TrainState:
    """Everything a checkpoint must carry to resume bit-exactly."""
    model: ViT
    optimizer: AdamW
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0


def predict(model: ViT, images: np.ndarray, batch_size: int = 250, packed: bool = False) -> np.ndarray:
    out = []
    for s in range(0, len(images), batch_size):
        out.append(model(images[s:s + batch_size], packed=packed).data)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.classes), np.float32)


def accuracy(model: ViT, images: np.ndarray, labels: np.ndarray, packed: bool = False) -> float:
    if len(labels) == 0:
        return float("nan")
    return float((predict(model, images, packed=packed).argmax(axis=1) == labels).mean())


def calibrate_beta(model: ViT, images: np.ndarray) -> list[float]:
    """Set each shortcut weight to ``10 - mean row support`` of the binarized
    attention seen on ``images``."""
    layers = model.diba_layers()
    if not layers:
        return []
    model(images)
    betas = []
    for attn in layers:
        b = init_beta(attn.last_attention)
        attn.beta.data[...] = b
        betas.append(b)
    return betas


def new_state(cfg: ModelConfig, tcfg: TrainConfig, seed: int) -> TrainState:
    model = build(cfg.variant(seed=seed))
    opt = AdamW(model.named_parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay,
                floors=model.floors())
    return TrainState(model, opt, np.random.default_rng(seed + 7919))


def train_teacher(cfg: ModelConfig, data: Dataset, tcfg: TrainConfig, seed: int) -> ViT:
    """Full-precision twin of ``cfg`` trained on labels only."""
    t = TrainConfig(epochs=tcfg.teacher_epochs, batch_size=tcfg.batch_size, lr=tcfg.teacher_lr,
                    weight_decay=tcfg.weight_decay, lam=0.0)
    state = new_state(cfg.variant(binary=False, use_diba=False, use_hfsc=False, use_irprelu=False), t, seed)
    fit(state, data, t)
    return state.model


def fit(state: TrainState, data: Dataset, tcfg: TrainConfig, teacher_logits: np.ndarray | None = None,
        on_epoch=None, until: int | None = None) -> RunReport:
    """Train from ``state`` (advanced in place) up to epoch ``until``, by
    default ``tcfg.epochs``. The learning-rate schedule always spans
    ``tcfg.epochs``, so stopping, saving and resuming is seamless.

    ``teacher_logits`` are indexed like ``data.x_train``. ``on_epoch`` is
    called with each :class:`EpochRecord` as soon as it is complete.
    """
    model, opt, rng = state.model, state.optimizer, state.rng
    cfg = model.cfg
    n = len(data.y_train)
    steps_per_epoch = -(-n // tcfg.batch_size)
    total = tcfg.epochs * steps_per_epoch
    report = RunReport(cfg)
    if cfg.binary:
        oc = count(cfg)
        report.bops, report.flops = oc.bops, oc.flops
    if state.step == 0 and cfg.binary and cfg.use_diba:
        calibrate_beta(model, data.x_train[:tcfg.batch_size])
    stop = tcfg.epochs if until is None else min(until, tcfg.epochs)
    start = time.perf_counter()
    while state.epoch < stop:
        losses, correct = [], 0
        order = rng.permutation(n)
        for s in range(0, n, tcfg.batch_size):
            idx = order[s:s + tcfg.batch_size]
            lr = cosine_lr(state.step, total, tcfg.lr)
            opt.zero_grad()
            with ag.Tape():
                logits = model(data.x_train[idx])
                t = None if teacher_logits is None else teacher_logits[idx]
                loss = distillation_loss(logits, t, data.y_train[idx], tcfg.lam)
                ag.backward(loss)
            opt.step(lr)
            state.step += 1
            value = float(loss.data)
            losses.append(value)
            report.step_losses.append(value)
            correct += int((logits.data.argmax(axis=1) == data.y_train[idx]).sum())
        state.epoch += 1
        rec = EpochRecord(state.epoch, state.step, float(np.mean(losses)), correct / n,
                          accuracy(model, data.x_test, data.y_test), lr,
                          time.perf_counter() - start)
        report.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    report.wall_s = time.perf_counter() - start
    return report


def train_run(cfg: ModelConfig, data: Dataset, tcfg: TrainConfig, seed: int,
              teacher: ViT | None = None, on_epoch=None) -> tuple[TrainState, RunReport]:
    state = new_state(cfg, tcfg, seed)
    logits = predict(teacher, data.x_train) if teacher is not None and tcfg.lam > 0 else None
    return state, fit(state, data, tcfg, logits, on_epoch)


@dataclass
class LadderRow:
    name: str
    flags: dict
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def ablation_ladder(base: ModelConfig, data: Dataset, seeds, tcfg: TrainConfig | None = None,
                    ladder=LADDER, log=None) -> list[LadderRow]:
    """Train every ladder variant once per seed and collect final test accuracy.

    One full-precision teacher is trained per seed and shared by the variants.
    """
    tcfg = tcfg or TrainConfig()
    rows = [LadderRow(name, flags, []) for name, flags in ladder]
    for seed in seeds:
        teacher = train_teacher(base, data, tcfg, seed) if tcfg.lam > 0 else None
        if log is not None and teacher is not None:
            log(f"teacher seed={seed} test_acc={accuracy(teacher, data.x_test, data.y_test):.4f}")
        for row in rows:
            _, rep = train_run(base.variant(**row.flags), data, tcfg, seed, teacher)
            row.accuracies.append(rep.final_accuracy)
            if log is not None:
                log(f"variant={row.name} seed={seed} test_acc={rep.final_accuracy:.4f} wall_s={rep.wall_s:.1f}")
    return rows


def is_monotone(rows: list[LadderRow]) -> bool:
    means = [r.mean for r in rows]
    return all(b >= a for a, b in zip(means, means[1:]))

