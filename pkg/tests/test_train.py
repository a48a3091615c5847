import numpy as np
import pytest

from didbvit import checkpoint
from didbvit.data import DatasetSpec, ingest
from didbvit.model import ModelConfig
from didbvit.train import (TrainConfig, ablation_ladder, calibrate_beta, fit, is_monotone, new_state,
                           predict, train_run)


@pytest.fixture(scope="module")
def tiny():
    return ingest(DatasetSpec(count=120))


TC = TrainConfig(epochs=2, batch_size=40, lam=0.0)


def test_same_seed_same_losses(tiny):
    a = train_run(ModelConfig(), tiny, TC, seed=3)[1]
    b = train_run(ModelConfig(), tiny, TC, seed=3)[1]
    assert a.step_losses == b.step_losses and len(a.step_losses) == 6
    c = train_run(ModelConfig(), tiny, TC, seed=4)[1]
    assert c.step_losses != a.step_losses


def test_report_fields(tiny):
    rep = train_run(ModelConfig(), tiny, TC, seed=0)[1]
    assert [e.epoch for e in rep.epochs] == [1, 2]
    line = rep.epochs[0].line()
    assert [kv.split("=")[0] for kv in line.split()] == ["epoch", "step", "loss", "train_acc", "test_acc",
                                                         "lr", "wall_s"]
    assert rep.bops == 1656832 and rep.flops == 215680


def test_resume_from_checkpoint_is_bit_exact(tiny, tmp_path):
    _, full = train_run(ModelConfig(), tiny, TC, seed=1)
    state = new_state(ModelConfig(), TC, 1)
    first = fit(state, tiny, TC, until=1)
    checkpoint.save(tmp_path / "a.ckpt", state, TC)
    resumed, tcfg = checkpoint.load(tmp_path / "a.ckpt")
    second = fit(resumed, tiny, tcfg)
    assert first.step_losses + second.step_losses == full.step_losses


def test_checkpoint_roundtrip_is_bit_exact(tiny, tmp_path):
    state, _ = train_run(ModelConfig(use_hfsc=False), tiny, TC, seed=2)
    checkpoint.save(tmp_path / "a.ckpt", state, TC)
    loaded, _ = checkpoint.load(tmp_path / "a.ckpt")
    checkpoint.save(tmp_path / "b.ckpt", loaded, TC)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    for (n, p), (_, q) in zip(state.model.named_parameters(), loaded.model.named_parameters()):
        assert p.data.dtype == q.data.dtype and np.array_equal(p.data, q.data), n
    assert state.rng.integers(1 << 62) == loaded.rng.integers(1 << 62)


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(ValueError, match="magic"):
        checkpoint.load(tmp_path / "x.ckpt")
    checkpoint.write_checkpoint(tmp_path / "t.ckpt", {"a": "1"}, {"w": np.arange(4.0)})
    raw = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="truncated"):
        checkpoint.read_checkpoint(tmp_path / "t.ckpt")


def test_checkpoint_header_layout(tmp_path):
    checkpoint.write_checkpoint(tmp_path / "h.ckpt", {"dim": "8"}, {"w": np.ones((2, 3), np.float32)})
    raw = (tmp_path / "h.ckpt").read_bytes()
    assert raw[:4] == b"DIDB" and int.from_bytes(raw[4:8], "little") == checkpoint.VERSION
    assert int.from_bytes(raw[8:12], "little") == len(b"dim=8\n") and raw[12:18] == b"dim=8\n"


def test_beta_calibration(tiny):
    state = new_state(ModelConfig(), TC, 0)
    betas = calibrate_beta(state.model, tiny.x_train[:20])
    assert len(betas) == 2 and all(b <= 10 for b in betas)
    assert float(state.model.blocks[0].attn.beta.data) == betas[0]


def test_untrained_model_is_near_chance():
    data = ingest(DatasetSpec(count=1000))
    m = new_state(ModelConfig(), TC, 0).model
    acc = (predict(m, data.x_test).argmax(1) == data.y_test).mean()
    assert abs(acc - 0.1) <= 0.05


def test_ladder_rows(tiny):
    ladder = (("a", dict(use_diba=False, use_hfsc=False, use_irprelu=False)), ("b", dict()))
    rows = ablation_ladder(ModelConfig(), tiny, [0, 1], TrainConfig(epochs=1, batch_size=60, lam=0.0),
                           ladder=ladder)
    assert [r.name for r in rows] == ["a", "b"] and all(len(r.accuracies) == 2 for r in rows)
    assert isinstance(is_monotone(rows), bool)
