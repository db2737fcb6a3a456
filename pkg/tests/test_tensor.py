"""Tensor primitives and the gradient tape."""

import numpy as np
import pytest

from ram import tensor as T
from ram.tensor import DimensionError, GradTape, NumericError, Tensor


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(-2.0, 2.0, shape)


class TestTensorBasics:
    def test_default_dtype_is_double(self):
        assert Tensor(np.zeros((2, 2))).dtype == np.float64

    def test_float32_supported(self):
        t = Tensor(np.zeros((2, 2), dtype=np.float32))
        assert t.dtype == np.float32

    def test_operator_overloads_match_numpy(self):
        a, b = rand((2, 3)), rand((2, 3), 1)
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_allclose((ta + tb).data, a + b)
        np.testing.assert_allclose((ta - tb).data, a - b)
        np.testing.assert_allclose((ta * tb).data, a * b)
        np.testing.assert_allclose((ta + 1.5).data, a + 1.5)
        np.testing.assert_allclose((2.0 * ta).data, 2.0 * a)

    def test_item_requires_scalar(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2,))).item()


class TestTape:
    def test_grad_accumulates_across_uses(self):
        with GradTape() as tape:
            x = Tensor(rand((3,)))
            y = T.reduce_sum(x * x + x)
            tape.backward(y)
            g = tape.grad(x)
        np.testing.assert_allclose(g, 2 * x.data + 1)

    def test_unreachable_grad_is_zeros(self):
        with GradTape() as tape:
            x = Tensor(rand((3,)))
            z = Tensor(rand((3,), 1))
            tape.backward(T.reduce_sum(x))
            assert np.all(tape.grad(z) == 0.0)

    def test_double_backward_rejected(self):
        with GradTape() as tape:
            x = Tensor(rand((3,)))
            y = T.reduce_sum(x)
            tape.backward(y)
            with pytest.raises(NumericError):
                tape.backward(y)

    def test_backward_needs_scalar(self):
        with GradTape() as tape:
            x = Tensor(rand((3,)))
            with pytest.raises(DimensionError):
                tape.backward(x + x)

    def test_deterministic_accumulation(self):
        def run():
            with GradTape() as tape:
                x = Tensor(rand((4, 4)))
                y = x
                for _ in range(5):
                    y = y * Tensor(rand((4, 4), 7)) + y
                tape.backward(T.reduce_sum(y))
                return tape.grad(x)

        np.testing.assert_array_equal(run(), run())


class TestShapeOps:
    def test_interleaved_split_takes_even_odd(self):
        x = rand((1, 6, 2, 2))
        even, odd = T.interleaved_split(Tensor(x))
        np.testing.assert_array_equal(even.data, x[:, 0::2])
        np.testing.assert_array_equal(odd.data, x[:, 1::2])

    def test_interleaved_merge_inverts_split(self):
        x = rand((2, 8, 3, 3))
        even, odd = T.interleaved_split(Tensor(x))
        np.testing.assert_array_equal(T.interleaved_merge(even, odd).data, x)

    def test_interleaved_split_rejects_odd_c(self):
        with pytest.raises(DimensionError):
            T.interleaved_split(Tensor(rand((1, 5, 2, 2))))

    def test_split_channels_sizes(self):
        x = Tensor(rand((1, 6, 2, 2)))
        a, b, c = T.split_channels(x, [1, 2, 3])
        assert a.shape[1] == 1 and b.shape[1] == 2 and c.shape[1] == 3
        np.testing.assert_array_equal(T.concat_channels([a, b, c]).data, x.data)

    def test_softmax_rows_sum_to_one(self):
        y = T.softmax(Tensor(rand((3, 5)) * 50), axis=-1)
        np.testing.assert_allclose(y.data.sum(axis=-1), 1.0)

    def test_channel_stats_values(self):
        x = rand((2, 3, 4, 4))
        mu, std = T.channel_stats(Tensor(x))
        np.testing.assert_allclose(mu.data[..., 0, 0], x.mean(axis=(2, 3)))
        np.testing.assert_allclose(std.data[..., 0, 0], np.sqrt(x.var(axis=(2, 3)) + 1e-6))


class TestNumerics:
    def test_sigmoid_stable_at_extremes(self):
        y = T.sigmoid(Tensor(np.array([-1e4, 0.0, 1e4])))
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0])

    def test_gelu_matches_erf_form(self):
        from scipy.special import erf

        x = rand((100,))
        expect = 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
        np.testing.assert_allclose(T.gelu(Tensor(x)).data, expect, atol=1e-12)

    def test_finite_check_flags_nan(self):
        with pytest.raises(NumericError):
            T.exp(Tensor(np.array([1e6])))
