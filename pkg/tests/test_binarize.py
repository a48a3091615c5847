import numpy as np
import pytest

from didbvit import autograd as ag
from didbvit.autograd import Parameter, Tensor
from didbvit.binarize import (A_MIN, BinarizerParams, att_binarize, att_binarize_forward, binarize_weight,
                              clamp_scale, round_half_away, rsign, rsign_forward, sign_surrogate,
                              surrogate_forward, weight_binarize, weight_scale)
from didbvit.bitcore import unpack


def test_params_validate():
    with pytest.raises(ValueError):
        BinarizerParams(a=0.0)


def test_rsign_forward_zero_maps_to_plus_one():
    p = BinarizerParams(2.0, 0.5)
    np.testing.assert_array_equal(rsign_forward([0.5, 0.49, 3.0], p), [1, -1, 1])


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away(np.array([-1.5, -0.5, 0.5, 1.5, 0.49])), [-2, -1, 1, 2, 0])


def test_att_binarize_forward_values():
    p = BinarizerParams(1.0, 0.5)
    # u = A - 0.5: 0.9 -> 0.4 rounds to 0, 1.0 -> 0.5 rounds half away to 1
    np.testing.assert_array_equal(att_binarize_forward([0.2, 0.9, 1.0, 1.2], p), [0, 0, 1, 1])


def test_weight_binarize_packs_signs_and_scales(rng):
    W = rng.standard_normal((3, 70))
    pm, scale = weight_binarize(W)
    np.testing.assert_array_equal(unpack(pm), np.where(W >= 0, 1, -1))
    np.testing.assert_allclose(scale.values, np.abs(W).mean(axis=1))
    np.testing.assert_allclose(weight_scale(W), scale.values)


def _grads(fn, x, a, b, g):
    with ag.Tape():
        out = fn(x, a, b)
        ag.backward((out * g).sum())
    return out


def test_rsign_tape_scale_and_bias_grads(rng):
    x = Tensor(rng.uniform(-2, 2, 50), requires_grad=True)
    a, b = Parameter(np.array(1.3)), Parameter(np.array(0.2))
    g = rng.standard_normal(50)
    _grads(rsign, x, a, b, g)
    u = (x.data - 0.2) / 1.3
    d = np.where(np.abs(u) < 1, 2 - 2 * np.abs(u), 0)
    np.testing.assert_allclose(x.grad, g * d)
    np.testing.assert_allclose(a.grad, -(g * d * u).sum())
    np.testing.assert_allclose(b.grad, -(g * d).sum())


def test_att_binarize_tape_forward_and_bias_grad(rng):
    x = Tensor(rng.uniform(0, 1, 40), requires_grad=True)
    a, b = Parameter(np.array(0.8)), Parameter(np.array(0.3))
    g = rng.standard_normal(40)
    out = _grads(att_binarize, x, a, b, g)
    np.testing.assert_allclose(out.data, att_binarize_forward(x.data, BinarizerParams(0.8, 0.3)))
    inside = (x.data >= 0.3) & (x.data < 1.1)
    np.testing.assert_allclose(b.grad, -(0.8 * g * inside).sum())


def test_binarize_weight_forward(rng):
    W = Parameter(rng.standard_normal((4, 6)))
    out = binarize_weight(W)
    np.testing.assert_allclose(out.data, np.abs(W.data).mean(1, keepdims=True) * np.sign(W.data))


def test_surrogate_switch():
    x = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]))
    np.testing.assert_array_equal(rsign(x, 1.0, 0.0).data, [-1, -1, 1, 1, 1])
    with surrogate_forward():
        np.testing.assert_allclose(rsign(x, 1.0, 0.0).data, sign_surrogate(x.data))
    np.testing.assert_allclose(sign_surrogate(x.data), [-1, -0.75, 0, 0.75, 1])


def test_clamp_scale():
    p = Parameter(np.array(-3.0))
    clamp_scale(p)
    assert p.data == A_MIN
