import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reasongr.model.quant import QMAX, block_absmax, dequantize, quantize_4bit


@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(1, 20), st.sampled_from([1, 3, 16, 64]))
def test_error_bound(seed, rows, cols, block):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((rows, cols)) * 10.0 ** rng.uniform(-3, 3)
    Q = quantize_4bit(W, block)
    err = np.abs(W - dequantize(Q))
    assert np.all(err <= block_absmax(W, block) / 14)
    assert np.all(np.abs(Q.codes) <= QMAX)


def test_lattice_round_trip_exact():
    rng = np.random.default_rng(0)
    codes = rng.integers(-7, 8, size=(8, 16))
    codes[:, 0] = 7                      # every 16-wide block reaches the absmax
    W = codes * 2.0 ** -3
    np.testing.assert_array_equal(dequantize(quantize_4bit(W, 16)), W)


def test_storage_is_four_bits():
    Q = quantize_4bit(np.ones((10, 7)), 64)
    assert Q.packed.dtype == np.uint8 and Q.packed.size == 35
    assert Q.scales.size == 2


def test_zero_block():
    W = np.zeros((2, 4))
    W[1, 3] = 3.0
    Q = quantize_4bit(W, 4)
    assert Q.scales[0] == 0.0
    np.testing.assert_array_equal(dequantize(Q), W)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(bad):
    W = np.ones((2, 2))
    W[0, 1] = bad
    with pytest.raises(ValueError):
        quantize_4bit(W)


def test_bad_block_and_shape():
    with pytest.raises(ValueError):
        quantize_4bit(np.ones((2, 2)), 0)
    with pytest.raises(ValueError):
        quantize_4bit(np.ones(4))


def test_block_absmax_oracle():
    W = np.arange(-5, 5, dtype=float).reshape(2, 5)
    # blocks of the flattening: [-5..-2], [-1..2], [3, 4]
    np.testing.assert_array_equal(block_absmax(W, 4).ravel(), [5] * 4 + [2] * 4 + [4, 4])
