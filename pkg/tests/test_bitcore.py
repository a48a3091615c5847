import numpy as np
import pytest

from conftest import signs
from didbvit.bitcore import (ChannelScale, PackedBitMatrix, binary_matmul, binary_matmul_int,
                             naive_float_matmul, pack, unpack, xnor_popcount_dot)


def test_pack_layout_is_lsb_first_with_zero_padding():
    row = -np.ones(70, dtype=np.int8)
    row[0] = row[3] = row[64] = 1
    pm = pack(row)
    assert pm.shape == (1, 70) and pm.words_per_row == 2
    assert pm.words()[0, 0] == np.uint64(0b1001)
    assert pm.words()[0, 1] == np.uint64(1)  # bits 65..127 are padding zeros


def test_pack_roundtrip(rng):
    m = signs(rng, 7, 130)
    np.testing.assert_array_equal(unpack(pack(m)), m)


def test_pack_rejects_non_sign_values():
    with pytest.raises(ValueError, match=r"\(1, 2\)"):
        pack(np.array([[1, -1, 1], [1, 1, 0]]))


def test_packed_matrix_is_read_only(rng):
    pm = pack(signs(rng, 2, 10))
    with pytest.raises(ValueError):
        pm.data[0] = 0


def test_packed_matrix_validates_word_count():
    with pytest.raises(ValueError):
        PackedBitMatrix(1, 65, 1, np.zeros(1, np.uint64))


@pytest.mark.parametrize("n", [1, 63, 64, 65, 200])
def test_dot_equals_integer_dot(rng, n):
    a, b = signs(rng, n), signs(rng, n)
    got = xnor_popcount_dot(pack(a).row(0), pack(b).row(0), n)
    assert got == int(a.astype(np.int64) @ b)


def test_dot_checks_word_count(rng):
    with pytest.raises(ValueError):
        xnor_popcount_dot(np.zeros(1, np.uint64), np.zeros(2, np.uint64), 64)


def test_gemm_matches_dense(rng):
    a, w = signs(rng, 9, 100), signs(rng, 5, 100)
    np.testing.assert_array_equal(binary_matmul_int(pack(a), pack(w)), a.astype(np.int64) @ w.T)


def test_gemm_inner_mismatch(rng):
    with pytest.raises(ValueError, match="inner"):
        binary_matmul_int(pack(signs(rng, 2, 10)), pack(signs(rng, 2, 11)))


def test_scaled_gemm(rng):
    a, w = signs(rng, 4, 33), signs(rng, 3, 33)
    s = np.array([0.5, 2.0, 0.0])
    np.testing.assert_allclose(binary_matmul(pack(a), pack(w), s), (a @ w.T) * s)
    with pytest.raises(ValueError):
        binary_matmul(pack(a), pack(w), ChannelScale(np.ones(2)))


def test_channel_scale_rejects_negative():
    with pytest.raises(ValueError):
        ChannelScale(np.array([1.0, -0.1]))


def test_naive_float_matmul(rng):
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
    np.testing.assert_allclose(naive_float_matmul(a, b), a @ b.T)
