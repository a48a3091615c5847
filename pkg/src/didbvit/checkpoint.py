"""Binary checkpoint files.

Layout, all integers little-endian::

    b"DIDB"  u32 version
    u32 config byte length, UTF-8 ``key=value`` lines
    u32 tensor count, then per tensor:
        u16 name length, UTF-8 name, u8 dtype tag, u8 ndim, ndim x u64 dims, raw data

Model parameters are stored under their module path, optimizer moments under
``opt.m.*`` / ``opt.v.*`` with the step in ``opt.t``, and the shuffling RNG
under ``rng.*``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, build
from .optim import AdamW
from .train import TrainConfig, TrainState

MAGIC = b"DIDB"
VERSION = 1
DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "<u8", 4: "<i4", 5: "|u1"}
TAGS = {np.dtype(v): k for k, v in DTYPES.items()}
MASK64 = (1 << 64) - 1


def write_checkpoint(path, config: dict[str, str], tensors: dict[str, np.ndarray]) -> None:
    text = "".join(f"{k}={v}\n" for k, v in config.items()).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(text)), text,
           struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if np.dtype(le) not in TAGS:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", TAGS[np.dtype(le)], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=le).tobytes())
    Path(path).write_bytes(b"".join(out))


def read_checkpoint(path) -> tuple[int, dict[str, str], dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {buf[:4]!r})")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ValueError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (clen,) = take("<I")
    config = {}
    for line in buf[pos:pos + clen].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        config[key] = value
    pos += clen
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        tag, ndim = take("<BB")
        if tag not in DTYPES:
            raise ValueError(f"{path}: tensor {name!r} has unknown dtype tag {tag}")
        shape = take(f"<{ndim}Q")
        dt = np.dtype(DTYPES[tag])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(buf):
            raise ValueError(f"{path}: tensor {name!r} is truncated")
        tensors[name] = np.frombuffer(buf, dt, int(np.prod(shape, dtype=np.int64)), pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return version, config, tensors


def _rng_tensors(rng: np.random.Generator) -> dict[str, np.ndarray]:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise TypeError(f"only PCG64 generators can be saved, got {st['bit_generator']}")
    s, inc = st["state"]["state"], st["state"]["inc"]
    return {
        "rng.state": np.array([s >> 64, s & MASK64], dtype=np.uint64),
        "rng.inc": np.array([inc >> 64, inc & MASK64], dtype=np.uint64),
        "rng.extra": np.array([st["has_uint32"], st["uinteger"]], dtype=np.uint64),
    }


def _rng_from(tensors) -> np.random.Generator:
    hi, lo = (int(x) for x in tensors["rng.state"])
    ihi, ilo = (int(x) for x in tensors["rng.inc"])
    has, uint = (int(x) for x in tensors["rng.extra"])
    bg = np.random.PCG64()
    bg.state = {"bit_generator": "PCG64", "state": {"state": (hi << 64) | lo, "inc": (ihi << 64) | ilo},
                "has_uint32": has, "uinteger": uint}
    return np.random.Generator(bg)


def save(path, state: TrainState, tcfg: TrainConfig) -> None:
    config = dict(line.split("=", 1) for line in state.model.cfg.to_lines())
    config.update(line.split("=", 1) for line in tcfg.to_lines())
    config["epoch"], config["step"] = str(state.epoch), str(state.step)
    tensors = {n: p.data for n, p in state.model.named_parameters()}
    tensors.update(state.optimizer.state_tensors())
    tensors.update(_rng_tensors(state.rng))
    write_checkpoint(path, config, tensors)


def load(path) -> tuple[TrainState, TrainConfig]:
    _, config, tensors = read_checkpoint(path)
    cfg = ModelConfig.from_mapping(config)
    tcfg = TrainConfig.from_mapping(config)
    model = build(cfg)
    for name, p in model.named_parameters():
        if name not in tensors:
            raise ValueError(f"{path}: checkpoint has no tensor for parameter {name!r}")
        if tensors[name].shape != p.data.shape:
            raise ValueError(f"{path}: {name!r} has shape {tensors[name].shape}, model expects {p.data.shape}")
        p.data = tensors[name].astype(p.data.dtype)
    opt = AdamW(model.named_parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay, floors=model.floors())
    opt.load_state_tensors(tensors)
    return TrainState(model, opt, _rng_from(tensors), int(config["epoch"]), int(config["step"])), tcfg
