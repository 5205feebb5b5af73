import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vitinflate.errors import NonFiniteError, ShapeError
from vitinflate.tensor_core import gelu, layer_norm, matmul, softmax_lastdim


def test_matmul_identity():
    a = np.array([[1, 2], [3, 4]], dtype=np.float32)
    np.testing.assert_array_equal(matmul(a, np.eye(2, dtype=np.float32)), a)
    np.testing.assert_array_equal(matmul(np.eye(2), np.array([[5.0], [7.0]])), [[5], [7]])


def test_matmul_hand_computed():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [7.0]]))
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, [[19.0], [43.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = (rng.standard_normal(s).astype(np.float32) for s in [(3, 4), (4, 5), (5, 2)])
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-4 * max(1.0, np.max(np.abs(right)))


def test_softmax_examples():
    np.testing.assert_allclose(softmax_lastdim(np.array([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(softmax_lastdim(np.array([1000.0, 1000.0])), [0.5, 0.5])
    np.testing.assert_allclose(softmax_lastdim(np.array([0.0, math.log(3.0)])), [0.25, 0.75], atol=1e-7)


def test_softmax_rejects_nan():
    with pytest.raises(NonFiniteError):
        softmax_lastdim(np.array([0.0, np.nan]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (4, 7), elements=st.floats(-100, 100, width=32)))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(softmax_lastdim(x).sum(axis=-1), 1.0, atol=1e-6)


def test_layer_norm_examples():
    one, zero = np.ones(4), np.zeros(4)
    np.testing.assert_array_equal(layer_norm(np.full(4, 3.5), one, zero), zero)
    np.testing.assert_allclose(layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=0.0), [1.0, -1.0])
    np.testing.assert_array_equal(layer_norm(np.array([1.0, 2.0, 9.0]), np.zeros(3), np.full(3, 5.0)), [5.0, 5.0, 5.0])


def test_layer_norm_length_mismatch():
    with pytest.raises(ShapeError):
        layer_norm(np.ones((2, 3)), np.ones(2), np.zeros(3))


def test_layer_norm_zero_mean(rng):
    x = rng.uniform(-50, 50, size=(32, 16))
    out = layer_norm(x, np.ones(16), np.zeros(16))
    assert np.all(np.abs(out.mean(axis=-1)) <= 1e-5)


def test_gelu_values():
    assert gelu(np.array(0.0)) == 0.0
    np.testing.assert_allclose(gelu(np.array(1.0)), 0.8413447, atol=1e-7)
    np.testing.assert_allclose(gelu(np.array(12.0)), 12.0)
    np.testing.assert_allclose(gelu(np.array(-12.0)), 0.0, atol=1e-6)
