"""``didbvit`` command line: train, eval, gradcheck, bench, ablate.

Text output is line oriented: metric records are ``key=value`` pairs in a
fixed field order, and each command's summary sits between ``---`` marker
lines. Figures go to PNG files in the output directory.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import thread_cap
from .data import DatasetSpec, ingest

PRESETS = {"toy": {}}


def parse_kv(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path):
    from .model import ModelConfig
    from .train import TrainConfig

    kv = parse_kv(Path(path).read_text(encoding="utf-8"))
    known = {f.name for f in fields(ModelConfig)} | {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {', '.join(unknown)}")
    return ModelConfig.from_mapping(kv), TrainConfig.from_mapping(kv)


def _apply_threads():
    cap = thread_cap()
    if cap is not None:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))


def _section(title: str, lines) -> None:
    print(f"--- {title} ---")
    for line in lines:
        print(line)
    print("---")


def _dataset(text: str, seed: int = 42):
    return ingest(DatasetSpec.parse(text, seed=seed))


def _check_compatible(cfg, data) -> None:
    size = data.x_train.shape[-1]
    if size != cfg.image_size or data.x_train.shape[1] != cfg.in_channels:
        raise ValueError(f"data images are {data.x_train.shape[1]}x{size}x{size}, model expects "
                         f"{cfg.in_channels}x{cfg.image_size}x{cfg.image_size}")
    top = int(max(data.y_train.max(initial=0), data.y_test.max(initial=0)))
    if top >= cfg.classes:
        raise ValueError(f"data has label {top}, model has only {cfg.classes} classes")


# ------------------------------------------------------------ commands

def cmd_train(args) -> int:
    from . import checkpoint, report
    from .model import ModelConfig, parameter_count
    from .train import TrainConfig, accuracy, train_run, train_teacher

    cfg, tcfg = load_config(args.config) if args.config else (ModelConfig(), TrainConfig())
    cfg = cfg.variant(seed=args.seed)
    data = _dataset(args.data)
    _check_compatible(cfg, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    teacher = None
    if cfg.binary and tcfg.lam > 0:
        teacher = train_teacher(cfg, data, tcfg, args.seed)
        print(f"teacher test_acc={accuracy(teacher, data.x_test, data.y_test):.4f}", flush=True)
    metrics = (out / "metrics.txt").open("w", encoding="utf-8")

    def emit(rec):
        print(rec.line(), flush=True)
        metrics.write(rec.line() + "\n")
        metrics.flush()

    state, rep = train_run(cfg, data, tcfg, args.seed, teacher, on_epoch=emit)
    metrics.close()
    ckpt = out / "model.ckpt"
    checkpoint.save(ckpt, state, tcfg)
    figure = report.training_curves(rep, out / "training.png")
    _section("report", [
        f"params={parameter_count(state.model)}",
        f"final_test_acc={rep.final_accuracy:.4f}",
        f"wall_s={rep.wall_s:.1f}",
        f"bops={rep.bops} flops={rep.flops} ops={rep.ops:.0f}",
        f"checkpoint={ckpt}",
        f"figure={figure}",
    ])
    return 0


def cmd_eval(args) -> int:
    from . import checkpoint
    from .train import accuracy

    if not Path(args.ckpt).is_file():
        print(f"error: no checkpoint at {args.ckpt}", file=sys.stderr)
        return 2
    state, _ = checkpoint.load(args.ckpt)
    data = _dataset(args.data)
    _check_compatible(state.model.cfg, data)
    acc = accuracy(state.model, data.x_test, data.y_test, packed=args.packed)
    _section("eval", [f"samples={len(data.y_test)}", f"top1={acc:.4f}"])
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    try:
        suites = gradcheck.run(args.filter)
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return 2
    lines = [r.line() for s in suites for r in s.results]
    ok = all(s.passed for s in suites)
    _section("gradcheck", lines + [f"status={'PASS' if ok else 'FAIL'}"])
    return 0 if ok else 1


def bench_gemm(m: int, n: int, k: int, seed: int = 0, repeats: int = 3) -> dict[str, float]:
    """Seconds for the packed XNOR-popcount GEMM and the naive float loop on
    the same +/-1 operands (best of ``repeats``; the float loop runs once)."""
    from .bitcore import binary_matmul_int, naive_float_matmul, pack

    rng = np.random.default_rng(seed)
    a = np.where(rng.random((m, k)) < 0.5, -1, 1).astype(np.int8)
    w = np.where(rng.random((n, k)) < 0.5, -1, 1).astype(np.int8)
    # warm up the compiled kernels before timing
    binary_matmul_int(pack(a[:2]), pack(w[:2]))
    naive_float_matmul(a[:2, :8].astype(np.float32), w[:2, :8].astype(np.float32))
    t0 = time.perf_counter()
    pa, pw = pack(a), pack(w)
    pack_s = time.perf_counter() - t0
    packed = min(_timed(lambda: binary_matmul_int(pa, pw)) for _ in range(repeats))
    af, wf = a.astype(np.float32), w.astype(np.float32)
    naive = _timed(lambda: naive_float_matmul(af, wf))
    return {"packed_s": packed, "pack_s": pack_s, "naive_s": naive}


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def cmd_bench(args) -> int:
    from . import report
    from .model import ModelConfig
    from .opcount import count

    try:
        m, n, k = (int(v) for v in args.size.split(","))
    except ValueError:
        print(f"error: --size wants M,N,K, got {args.size!r}", file=sys.stderr)
        return 2
    t = bench_gemm(m, n, k)
    work = 2.0 * m * n * k
    gops = {"packed xnor-popcount": work / t["packed_s"] / 1e9, "naive float loop": work / t["naive_s"] / 1e9}
    cfg = load_config(args.config)[0] if args.config else ModelConfig()
    oc = count(cfg)
    out = Path(args.out)
    figure = report.bench_bars(gops, out / "bench.png")
    _section("bench", [
        f"size={m},{n},{k}",
        f"packed_s={t['packed_s']:.4f} pack_s={t['pack_s']:.4f} naive_s={t['naive_s']:.4f}",
        f"packed_gops={gops['packed xnor-popcount']:.2f} naive_gops={gops['naive float loop']:.3f}",
        f"speedup={t['naive_s'] / t['packed_s']:.1f}",
        f"bops={oc.bops} flops={oc.flops} ops={oc.ops:.0f}",
        f"figure={figure}",
    ])
    return 0


def cmd_ablate(args) -> int:
    from . import report
    from .model import ModelConfig
    from .train import TrainConfig, ablation_ladder, is_monotone

    if args.preset not in PRESETS:
        print(f"error: unknown preset {args.preset!r}", file=sys.stderr)
        return 2
    seeds = [int(s) for s in args.seeds.split(",") if s]
    cfg, tcfg = ModelConfig(**PRESETS[args.preset]), TrainConfig()
    if args.epochs:
        tcfg.epochs = args.epochs
    data = _dataset(args.data)
    rows = ablation_ladder(cfg, data, seeds, tcfg, log=lambda s: print(s, flush=True))
    out = Path(args.out)
    figure = report.ablation_bars(rows, out / "ablation.png")
    lines = [f"variant={r.name} mean={r.mean:.4f} std={r.std:.4f} seeds="
             + ",".join(f"{a:.4f}" for a in r.accuracies) for r in rows]
    gain = rows[-1].mean - rows[0].mean
    lines += [f"monotone={'yes' if is_monotone(rows) else 'no'}", f"gain={gain:.4f}", f"figure={figure}"]
    _section("ablation", lines)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="didbvit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model, write metrics, checkpoint and figure")
    t.add_argument("--config", help="key=value config file (defaults: toy preset)")
    t.add_argument("--data", default="synthetic-shapes", help="synthetic-shapes[:N] or CIFAR-10 .bin path")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on the test split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", default="synthetic-shapes")
    e.add_argument("--packed", action="store_true", help="run binary layers through the packed kernel")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="gradient suites; nonzero exit on failure")
    g.add_argument("--filter", help="run suites whose name contains this string")
    g.set_defaults(fn=cmd_gradcheck)

    b = sub.add_parser("bench", help="packed vs naive GEMM throughput and analytic op count")
    b.add_argument("--size", default="1024,1024,1024", help="M,N,K")
    b.add_argument("--config", help="model config for the op count (default: toy preset)")
    b.add_argument("--out", default=".")
    b.set_defaults(fn=cmd_bench)

    a = sub.add_parser("ablate", help="train the four-variant ladder over several seeds")
    a.add_argument("--preset", default="toy")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--data", default="synthetic-shapes")
    a.add_argument("--epochs", type=int, help="override the preset epoch count")
    a.add_argument("--out", default=".")
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads()
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
