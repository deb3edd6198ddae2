import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwcnn.nn import (FilterBank, SeededRng, batch_stat_normalize, conv1d, conv2d, elu,
                      glorot_bound, global_average, init_filters, max_pool, mean_pool,
                      output_length, relu, residual_add)
from rwcnn._validation import InvalidInputError

from oracles import naive_conv, naive_pool, random_kernel_cases, rel_err


def _bank(w, b, stride, padding):
    return FilterBank(w.copy(), b.copy(), stride, padding)


@pytest.mark.parametrize("case", random_kernel_cases(60, seed=7))
def test_conv_matches_nested_loops(case):
    f = _bank(case["w"], case["b"], case["stride"], case["padding"])
    conv = conv1d if case["x"].ndim == 2 else conv2d
    got = conv(case["x"], f)
    want = naive_conv(case["x"], case["w"], case["b"], case["stride"], case["padding"])
    assert got.shape == want.shape
    assert got.dtype == np.float32
    assert rel_err(got, want) < 1e-5


@pytest.mark.parametrize("case", random_kernel_cases(60, seed=8))
def test_pools_match_nested_loops(case):
    x = case["x"]
    assert rel_err(max_pool(x, case["psize"], case["pstride"]),
                   naive_pool(x, case["psize"], case["pstride"], np.max)) == 0.0
    assert rel_err(mean_pool(x, case["psize"], case["pstride"]),
                   naive_pool(x, case["psize"], case["pstride"], np.mean)) < 1e-6


def test_same_padding_output_length():
    x = np.ones((1, 100), dtype=np.float32)
    f = init_filters((2, 1, 7), SeededRng(0), stride=3, padding="same")
    assert conv1d(x, f).shape == (2, 34) == (2, output_length(100, 7, 3, "same"))


def test_valid_padding_kernel_too_long():
    f = init_filters((1, 1, 9), SeededRng(0))
    with pytest.raises(InvalidInputError):
        conv1d(np.zeros((1, 5), dtype=np.float32), f)


def test_channel_mismatch():
    f = init_filters((1, 2, 3), SeededRng(0))
    with pytest.raises(InvalidInputError):
        conv1d(np.zeros((3, 10), dtype=np.float32), f)


def test_init_filters_glorot_and_reproducible():
    shape = (64, 16, 3, 3)
    a = init_filters(shape, SeededRng(5, 17))
    b = init_filters(shape, SeededRng(5, 17))
    c = init_filters(shape, SeededRng(5, 18))
    bound = np.sqrt(6.0 / (16 * 9 + 64 * 9))
    assert glorot_bound(shape) == pytest.approx(bound)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    assert np.abs(a.weights).max() <= bound
    # uniform(-a, a) has variance a^2 / 3
    assert a.weights.var() == pytest.approx(bound ** 2 / 3, rel=0.05)
    assert not a.bias.any()


def test_filters_are_immutable():
    f = init_filters((2, 1, 3), SeededRng(0))
    with pytest.raises(ValueError):
        f.weights[0, 0, 0] = 1.0


@pytest.mark.parametrize("bad", [dict(stride=0), dict(padding="full")])
def test_filterbank_rejects_bad_config(bad):
    with pytest.raises(InvalidInputError):
        init_filters((1, 1, 3), SeededRng(0), **bad)


def test_activations():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 3.0], dtype=np.float32)
    assert np.array_equal(relu(x), [0, 0, 0, 0.5, 3])
    np.testing.assert_allclose(elu(x), np.where(x > 0, x, np.exp(x) - 1), rtol=1e-6)
    assert elu(x).dtype == np.float32


def test_residual_shape_check():
    with pytest.raises(InvalidInputError):
        residual_add(np.zeros((2, 3)), np.zeros((2, 4)))


def test_global_average():
    x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    np.testing.assert_array_equal(global_average(x), [5.5, 17.5])


def test_batch_stat_normalize(rng):
    F = rng.normal(3.0, 2.0, size=(40, 5))
    Z = batch_stat_normalize(F)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0), 1, atol=1e-5)
    with pytest.raises(InvalidInputError):
        batch_stat_normalize(F[:1])


def test_batch_stat_normalize_depends_on_batch_mates(rng):
    F = rng.normal(size=(10, 3))
    a = batch_stat_normalize(F[:5])[0]
    b = batch_stat_normalize(np.vstack([F[:1], F[5:9]]))[0]
    assert not np.allclose(a, b)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(5, 60), k=st.integers(1, 5), s=st.integers(1, 4),
       mode=st.sampled_from(["valid", "same"]))
def test_conv_output_length_property(n, k, s, mode):
    f = init_filters((1, 1, k), SeededRng(1), stride=s, padding=mode)
    y = conv1d(np.ones((1, n), dtype=np.float32), f)
    assert y.shape[1] == output_length(n, k, s, mode)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_conv_is_linear(seed):
    r = np.random.default_rng(seed)
    f = FilterBank(r.standard_normal((2, 3, 3)).astype(np.float32), np.zeros(2, np.float32))
    a, b = (r.standard_normal((3, 20)).astype(np.float32) for _ in range(2))
    np.testing.assert_allclose(conv1d(a + b, f), conv1d(a, f) + conv1d(b, f), atol=1e-4)
