import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reasongr.model.lora import LoraAdapter, apply_adapted, fit_lora, init_lora, orthonormal_columns
from reasongr.model.quant import dequantize, quantize_4bit


@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12))
def test_apply_matches_explicit(seed, d, k):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, min(d, k) + 1))
    Q = quantize_4bit(rng.standard_normal((d, k)), 8)
    ad = LoraAdapter("t", rng.standard_normal((d, r)), rng.standard_normal((k, r)), float(rng.uniform(0.5, 4)))
    x = rng.standard_normal((3, k))
    explicit = x @ (dequantize(Q) + ad.scale * ad.A @ ad.B.T).T
    np.testing.assert_allclose(apply_adapted(Q, ad, x), explicit, atol=1e-10, rtol=0)
    np.testing.assert_allclose(apply_adapted(Q, ad, x[0]), explicit[0], atol=1e-10, rtol=0)


def test_zero_b_is_bitwise_noop():
    rng = np.random.default_rng(0)
    Q = quantize_4bit(rng.standard_normal((6, 5)), 4)
    ad = init_lora(6, 5, 3, rng)
    x = rng.standard_normal((4, 5))
    np.testing.assert_array_equal(apply_adapted(Q, ad, x), apply_adapted(Q, None, x))
    assert not ad.delta().any()


def test_init_orthonormal():
    ad = init_lora(10, 7, 4, np.random.default_rng(1))
    np.testing.assert_allclose(ad.A.T @ ad.A, np.eye(4), atol=1e-12)
    assert ad.B.shape == (7, 4) and ad.scale == 1.0


def test_init_rank_bounds():
    with pytest.raises(ValueError):
        init_lora(3, 5, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        init_lora(3, 5, 0, np.random.default_rng(0))


def test_dimension_mismatch():
    rng = np.random.default_rng(2)
    ad = init_lora(4, 3, 2, rng)
    with pytest.raises(ValueError):
        apply_adapted(np.zeros((4, 5)), None, np.zeros(4))
    with pytest.raises(ValueError):
        apply_adapted(np.zeros((4, 4)), ad, np.zeros(4))


@given(st.integers(0, 2**32 - 1))
def test_full_rank_fit(seed):
    rng = np.random.default_rng(seed)
    d, k = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    D = rng.standard_normal((d, k))
    ad = fit_lora(D, min(d, k))
    assert np.abs(ad.delta() - D).max() < 1e-8


def test_low_rank_fit_is_eckart_young_optimal():
    rng = np.random.default_rng(4)
    D = rng.standard_normal((8, 6))
    s = np.linalg.svd(D, compute_uv=False)
    ad = fit_lora(D, 2, iters=500)
    assert np.linalg.norm(D - ad.delta()) == pytest.approx(np.sqrt((s[2:] ** 2).sum()), rel=1e-6)


def test_gram_schmidt_deterministic():
    a = orthonormal_columns(5, 3, np.random.default_rng(9))
    b = orthonormal_columns(5, 3, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
