"""Dataset ingestion: CIFAR-10 binary batches and seeded synthetic shapes."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)

SHAPE_CLASSES = ("disk", "square", "ring", "frame", "plus", "cross",
                 "hstripes", "vstripes", "triangle", "checker")


@dataclass
class DatasetSpec:
    source: str = "synthetic-shapes"
    path: str | None = None
    count: int = 5000
    image_size: int = 32
    train_fraction: float = 0.8
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None
    seed: int = 42

    def __post_init__(self):
        if self.source not in ("cifar10-binary", "synthetic-shapes"):
            raise ValueError(f"unknown dataset source {self.source!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.source == "cifar10-binary" and not self.path:
            raise ValueError("cifar10-binary needs a path")

    @classmethod
    def parse(cls, text: str, seed: int = 42) -> "DatasetSpec":
        """``synthetic-shapes[:COUNT]`` or a path to CIFAR-10 ``.bin`` data."""
        if text.startswith("synthetic-shapes"):
            _, _, count = text.partition(":")
            return cls("synthetic-shapes", count=int(count) if count else 5000, seed=seed)
        return cls("cifar10-binary", path=text, seed=seed)


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    classes: int = 10

    def batches(self, batch_size: int, rng: np.random.Generator | None = None, train: bool = True):
        x, y = (self.x_train, self.y_train) if train else (self.x_test, self.y_test)
        idx = rng.permutation(len(y)) if rng is not None else np.arange(len(y))
        for s in range(0, len(y), batch_size):
            j = idx[s:s + batch_size]
            yield x[j], y[j]


def read_cifar10_binary(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one ``.bin`` file (or every ``*.bin`` in a directory, sorted) of
    3073-byte records: one label byte, then 1024 R, 1024 G, 1024 B bytes."""
    path = Path(path)
    files = sorted(path.glob("*.bin")) if path.is_dir() else [path]
    if not files:
        raise FileNotFoundError(f"no .bin files under {path}")
    images, labels = [], []
    for f in files:
        raw = np.fromfile(f, dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD:
            raise ValueError(f"{f}: {raw.size} bytes is not a whole number of {CIFAR_RECORD}-byte records "
                             "(truncated file?)")
        rec = raw.reshape(-1, CIFAR_RECORD)
        lab = rec[:, 0]
        if lab.max() > 9:
            bad = int(np.argmax(lab > 9))
            raise ValueError(f"{f}: record {bad} has label {lab[bad]}, expected 0..9")
        labels.append(lab.astype(np.int64))
        images.append(rec[:, 1:].reshape((-1,) + CIFAR_SHAPE))
    return np.concatenate(images), np.concatenate(labels)


def write_cifar10_binary(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    rec.tofile(path)


def _shape_mask(cls: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    r = rng.uniform(0.22, 0.36) * size
    cy, cx = rng.uniform(r, size - r, 2)
    dy, dx = yy - cy, xx - cx
    ady, adx = np.abs(dy), np.abs(dx)
    if cls == 0:
        return dy ** 2 + dx ** 2 <= r ** 2
    if cls == 1:
        return np.maximum(ady, adx) <= r * 0.85
    if cls == 2:
        d = np.sqrt(dy ** 2 + dx ** 2)
        return (d <= r) & (d >= r * 0.55)
    if cls == 3:
        m = np.maximum(ady, adx)
        return (m <= r * 0.9) & (m >= r * 0.55)
    if cls == 4:
        w = r * 0.3
        return ((ady <= w) & (adx <= r)) | ((adx <= w) & (ady <= r))
    if cls == 5:
        w = r * 0.3
        return (np.abs(dy - dx) <= w * 1.4) & (np.maximum(ady, adx) <= r) | \
               (np.abs(dy + dx) <= w * 1.4) & (np.maximum(ady, adx) <= r)
    period = rng.uniform(3.0, 5.0)
    phase = rng.uniform(0, period)
    box = np.maximum(ady, adx) <= r
    if cls == 6:
        return box & (((yy + phase) % period) < period / 2)
    if cls == 7:
        return box & (((xx + phase) % period) < period / 2)
    if cls == 8:
        return (dy <= r * 0.8) & (dy >= -r) & (adx <= (dy + r) * 0.55)
    cell = rng.integers(3, 6)
    return box & ((((yy // cell) + (xx // cell)) % 2) == 0)


def synthetic_shapes(count: int, image_size: int = 32, seed: int = 42):
    """Seeded RGB images of ten parametric shape classes with exact labels.

    Position, size, foreground/background colours and pixel noise vary per
    image; the label is balanced round-robin before shuffling.
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % len(SHAPE_CLASSES)).astype(np.int64)
    images = np.empty((count, 3, image_size, image_size), dtype=np.uint8)
    for i, c in enumerate(labels):
        mask = _shape_mask(int(c), image_size, rng)
        # random hues, but the shape is always the brighter layer
        bg = rng.uniform(0, 100, 3)
        fg = rng.uniform(140, 255, 3)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        img += rng.normal(0, 12, img.shape)
        images[i] = np.clip(img, 0, 255).astype(np.uint8)
    return images, labels


def ingest(spec: DatasetSpec) -> Dataset:
    if spec.source == "synthetic-shapes":
        images, labels = synthetic_shapes(spec.count, spec.image_size, spec.seed)
    else:
        images, labels = read_cifar10_binary(spec.path)
    if images.shape[2] != images.shape[3]:
        raise ValueError("images must be square")
    rng = np.random.default_rng(spec.seed + 1)
    idx = rng.permutation(len(labels))
    cut = int(round(len(labels) * spec.train_fraction))
    tr, te = idx[:cut], idx[cut:]
    x = images.astype(np.float32) / 255.0
    if spec.mean is None:
        mean = x[tr].mean(axis=(0, 2, 3))
        std = x[tr].std(axis=(0, 2, 3)) + 1e-6
    else:
        mean, std = np.asarray(spec.mean, np.float32), np.asarray(spec.std, np.float32)
    x = (x - mean[None, :, None, None]) / std[None, :, None, None]
    return Dataset(x[tr], labels[tr], x[te], labels[te], mean.astype(np.float32), std.astype(np.float32))
