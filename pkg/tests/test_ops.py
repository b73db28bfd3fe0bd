"""Convolution, pooling, normalization, and activation kernels vs oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rdgan import Tape, Tensor, backward
from rdgan import ops
from rdgan import tensor as T
from rdgan.errors import ShapeError, UsageError
from rdgan.rng import Rng

from oracles import (
    batchnorm_eval_oracle,
    conv2d_oracle,
    conv3d_oracle,
    deconv2d_oracle,
    int_valued,
    matmul_oracle,
)


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class TestLinear:
    def test_identity_map(self):
        out = ops.linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
        assert_array_equal(out.data, [[1.0, 2.0]])

    def test_summation_plus_bias(self):
        out = ops.linear(Tensor([[1.0, 1.0]]), Tensor([[1.0, 1.0]]), Tensor([3.0]))
        assert_array_equal(out.data, [[5.0]])

    def test_matches_triple_loop_oracle_exactly(self):
        rng = np.random.default_rng(3)
        x = int_valued(rng, (4, 28))
        w = int_valued(rng, (128, 28))
        out = ops.linear(Tensor(x), Tensor(w))
        assert_array_equal(out.data, matmul_oracle(x, w))

    def test_matches_oracle_on_gaussian_input(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(4, 28))
        w = rng.normal(size=(16, 28))
        out = ops.linear(Tensor(x), Tensor(w))
        assert_allclose(out.data, matmul_oracle(x, w), rtol=1e-12, atol=1e-12)

    def test_inner_dim_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            ops.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_without_bias(self):
        out = ops.linear(Tensor([[2.0, 0.0]]), Tensor(np.eye(2)))
        assert_array_equal(out.data, [[2.0, 0.0]])


class TestConv2d:
    def test_all_ones_summation(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = ops.conv2d(x, k, stride=1, pad=0)
        assert out.shape == (1, 1, 2, 2)
        assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))

    def test_diagonal_kernel(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        k = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 2, 2))
        out = ops.conv2d(x, k)
        assert_array_equal(out.data, [[[[5.0]]]])

    def test_same_padding_shape(self):
        out = ops.conv2d(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((16, 3, 3, 3))), stride=1, pad=1)
        assert out.shape == (1, 16, 8, 8)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_matches_direct_summation_oracle_exactly(self, stride, pad):
        rng = np.random.default_rng(10 * stride + pad)
        x = int_valued(rng, (2, 3, 7, 6))
        k = int_valued(rng, (4, 3, 3, 3))
        out = ops.conv2d(Tensor(x), Tensor(k), stride=stride, pad=pad)
        assert_array_equal(out.data, conv2d_oracle(x, k, stride, pad))

    def test_kernel_exceeding_padded_input_raises(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), stride=1, pad=1)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))


class TestDeconv2d:
    def test_stride2_kernel4_pad1_doubles_extent(self):
        out = ops.deconv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((2, 5, 4, 4))), stride=2, pad=1)
        assert out.shape == (1, 5, 8, 8)

    def test_single_element_scatter_stamps_kernel(self):
        v = 3.0
        k = np.arange(4.0).reshape(1, 1, 2, 2)
        out = ops.deconv2d(Tensor(np.full((1, 1, 1, 1), v)), Tensor(k), stride=2, pad=0)
        assert_array_equal(out.data, v * k)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 0), (2, 1), (3, 1)])
    def test_matches_scatter_oracle_exactly(self, stride, pad):
        rng = np.random.default_rng(20 * stride + pad)
        x = int_valued(rng, (2, 3, 4, 5))
        k = int_valued(rng, (3, 2, 4, 4))
        out = ops.deconv2d(Tensor(x), Tensor(k), stride=stride, pad=pad)
        assert_array_equal(out.data, deconv2d_oracle(x, k, stride, pad))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (3, 2)])
    def test_adjoint_identity_against_conv2d(self, stride, pad):
        rng = np.random.default_rng(30 * stride + pad)
        x = rng.normal(size=(2, 3, 5, 5))
        k = rng.normal(size=(3, 4, 4, 4))
        dx = ops.deconv2d(Tensor(x), Tensor(k), stride=stride, pad=pad)
        y = rng.normal(size=dx.shape)
        cy = ops.conv2d(Tensor(y), Tensor(k), stride=stride, pad=pad)
        lhs = float((dx.data * y).sum())
        rhs = float((x * cy.data).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_nonpositive_output_extent_raises(self):
        with pytest.raises(ShapeError):
            ops.deconv2d(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.zeros((1, 1, 1, 1))), stride=1, pad=1)


class TestConv3d:
    def test_all_ones_summation(self):
        out = ops.conv3d(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.ones((1, 1, 2, 2, 2))))
        assert out.shape == (1, 1, 1, 1, 1)
        assert_array_equal(out.data, np.full((1, 1, 1, 1, 1), 8.0))

    def test_full_extent_kernel_equals_flattened_dot_product(self):
        rng = np.random.default_rng(5)
        x = int_valued(rng, (3, 2, 4, 4, 4))
        k = int_valued(rng, (6, 2, 4, 4, 4))
        out = ops.conv3d(Tensor(x), Tensor(k))
        assert out.shape == (3, 6, 1, 1, 1)
        via_linear = ops.linear(Tensor(x.reshape(3, -1)), Tensor(k.reshape(6, -1)))
        assert_array_equal(out.data.reshape(3, 6), via_linear.data)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), ((1, 2, 2), (1, 1, 1))])
    def test_matches_direct_summation_oracle_exactly(self, stride, pad):
        rng = np.random.default_rng(99)
        x = int_valued(rng, (2, 3, 4, 8, 8))
        k = int_valued(rng, (4, 3, 3, 3, 3))
        out = ops.conv3d(Tensor(x), Tensor(k), stride=stride, pad=pad)
        s = stride if isinstance(stride, tuple) else (stride,) * 3
        p = pad if isinstance(pad, tuple) else (pad,) * 3
        assert_array_equal(out.data, conv3d_oracle(x, k, s, p))

    def test_kernel_exceeding_input_raises(self):
        with pytest.raises(ShapeError):
            ops.conv3d(Tensor(np.zeros((1, 1, 2, 4, 4))), Tensor(np.zeros((1, 1, 3, 3, 3))))


class TestMaxpool:
    def test_constant_tensor_invariant(self):
        out = ops.maxpool3d(Tensor(np.full((1, 2, 4, 4, 4), 2.5)))
        assert out.shape == (1, 2, 2, 2, 2)
        assert_array_equal(out.data, np.full((1, 2, 2, 2, 2), 2.5))

    def test_window_of_one_through_eight_gives_eight(self):
        x = np.arange(1.0, 9.0).reshape(1, 1, 2, 2, 2)
        out = ops.maxpool3d(Tensor(x))
        assert_array_equal(out.data, [[[[[8.0]]]]])

    def test_shape_arithmetic_at_full_scale(self):
        out = ops.maxpool3d(Tensor(np.zeros((1, 1, 16, 64, 64), dtype=np.float32)))
        assert out.shape == (1, 1, 8, 32, 32)

    def test_gradient_routes_to_first_maximum_on_ties(self):
        x = leaf(np.zeros((1, 1, 2, 2, 2)))  # all equal: 8-way tie
        with Tape():
            loss = T.tsum(ops.maxpool3d(x))
        backward(loss)
        expected = np.zeros((1, 1, 2, 2, 2))
        expected[0, 0, 0, 0, 0] = 1.0
        assert_array_equal(x.grad, expected)

    def test_gradient_routes_to_unique_maximum(self):
        data = np.zeros((1, 1, 2, 2, 2))
        data[0, 0, 1, 0, 1] = 5.0
        x = leaf(data)
        with Tape():
            loss = T.tsum(ops.maxpool3d(x))
        backward(loss)
        expected = np.zeros_like(data)
        expected[0, 0, 1, 0, 1] = 1.0
        assert_array_equal(x.grad, expected)

    def test_non_divisible_extent_raises(self):
        with pytest.raises(ShapeError):
            ops.maxpool3d(Tensor(np.zeros((1, 1, 3, 4, 4))))

    def test_maxpool2d(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = ops.maxpool2d(Tensor(x))
        assert_array_equal(out.data, [[[[5.0, 7.0], [13.0, 15.0]]]])


def fresh_stats(c, dtype=np.float64):
    return ops.RunningStats(mean=Tensor(np.zeros(c, dtype=dtype)), var=Tensor(np.ones(c, dtype=dtype)))


class TestBatchnorm:
    def test_constant_input_train_mode_gives_zeros(self):
        x = Tensor(np.full((4, 3, 2, 2), 7.0))
        out = ops.batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), "train", fresh_stats(3))
        assert_allclose(out.data, 0.0, atol=1e-6)

    def test_train_mode_normalizes_per_channel(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(8, 4, 6, 6)))
        out = ops.batchnorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), "train", fresh_stats(4))
        mu = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        assert np.abs(mu).max() < 1e-6
        assert np.abs(var - 1.0).max() < 1e-4

    def test_eval_mode_matches_recompute_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(3, 2, 4, 4))
        gamma = rng.normal(size=2)
        beta = rng.normal(size=2)
        stats = ops.RunningStats(mean=Tensor(rng.normal(size=2)), var=Tensor(np.abs(rng.normal(size=2)) + 0.5))
        out = ops.batchnorm(Tensor(x), Tensor(gamma), Tensor(beta), "eval", stats)
        expected = batchnorm_eval_oracle(x, gamma, beta, stats.mean.data, stats.var.data)
        assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    def test_train_mode_updates_running_stats_by_ema(self):
        rng = np.random.default_rng(13)
        x = rng.normal(loc=1.0, size=(16, 3, 5, 5))
        stats = fresh_stats(3)
        ops.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), "train", stats, momentum=0.1)
        expected_mean = 0.9 * 0.0 + 0.1 * x.mean(axis=(0, 2, 3))
        expected_var = 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3))
        assert_allclose(stats.mean.data, expected_mean, rtol=1e-12)
        assert_allclose(stats.var.data, expected_var, rtol=1e-12)

    def test_eval_mode_leaves_running_stats_alone(self):
        stats = fresh_stats(2)
        before = stats.mean.data.copy(), stats.var.data.copy()
        ops.batchnorm(Tensor(np.random.default_rng(0).normal(size=(4, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), "eval", stats)
        assert_array_equal(stats.mean.data, before[0])
        assert_array_equal(stats.var.data, before[1])

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ops.batchnorm(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.ones(4)), Tensor(np.zeros(4)), "train", fresh_stats(4))

    def test_bad_mode_raises(self):
        with pytest.raises(UsageError):
            ops.batchnorm(Tensor(np.zeros((2, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), "test", fresh_stats(3))

    def test_2d_activations_normalize_over_batch_axis(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.normal(loc=2.0, size=(64, 5)))
        out = ops.batchnorm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), "train", fresh_stats(5))
        assert np.abs(out.data.mean(axis=0)).max() < 1e-6


class TestActivations:
    def test_relu_values(self):
        out = ops.activation(Tensor([-1.0, 2.0]), "relu")
        assert_array_equal(out.data, [0.0, 2.0])

    def test_leaky_relu_slope(self):
        out = ops.activation(Tensor([-1.0]), "leaky_relu", alpha=0.2)
        assert_allclose(out.data, [-0.2])

    def test_sigmoid_and_tanh_at_zero(self):
        assert ops.sigmoid(Tensor([0.0])).data[0] == 0.5
        assert ops.tanh(Tensor([0.0])).data[0] == 0.0

    def test_sigmoid_extreme_inputs_do_not_overflow(self):
        out = ops.sigmoid(Tensor([-1000.0, 1000.0]))
        assert_allclose(out.data, [0.0, 1.0], atol=1e-12)

    def test_unknown_kind_raises(self):
        with pytest.raises(UsageError):
            ops.activation(Tensor([0.0]), "swish")


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = np.arange(10.0)
        out = ops.dropout(Tensor(x), 0.5, Rng(0), "eval")
        assert_array_equal(out.data, x)

    def test_train_mode_zeroes_and_rescales(self):
        rng = Rng(123)
        x = np.ones(10000)
        out = ops.dropout(Tensor(x), 0.5, rng, "train")
        kept = out.data != 0
        assert 0.45 < kept.mean() < 0.55
        assert_allclose(out.data[kept], 2.0)

    def test_deterministic_under_same_rng_state(self):
        a = ops.dropout(Tensor(np.ones(100)), 0.3, Rng(9), "train")
        b = ops.dropout(Tensor(np.ones(100)), 0.3, Rng(9), "train")
        assert_array_equal(a.data, b.data)

    def test_bad_rate_raises(self):
        with pytest.raises(UsageError):
            ops.dropout(Tensor(np.ones(3)), 1.0, Rng(0), "train")


class TestCrossEntropy:
    def test_uniform_logits_give_log_k(self):
        loss = ops.cross_entropy(Tensor(np.zeros((4, 5))), np.zeros(4, dtype=int))
        assert_allclose(loss.data, np.log(5.0), rtol=1e-12)

    def test_perfect_prediction_loss_near_zero(self):
        logits = np.full((2, 3), -100.0)
        logits[0, 1] = 100.0
        logits[1, 2] = 100.0
        loss = ops.cross_entropy(Tensor(logits), np.array([1, 2]))
        assert loss.data < 1e-8

    def test_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(2)
        logits = leaf(rng.normal(size=(3, 4)))
        labels = np.array([0, 3, 1])
        with Tape():
            loss = ops.cross_entropy(logits, labels)
        backward(loss)
        probs = ops.softmax_probs(logits)
        expected = probs.copy()
        expected[np.arange(3), labels] -= 1.0
        assert_allclose(logits.grad, expected / 3.0, rtol=1e-12)

    def test_label_out_of_range_raises(self):
        with pytest.raises(UsageError):
            ops.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


class TestSampleGaussian:
    def test_zero_std_gives_constant(self):
        out = ops.sample_gaussian((5,), mean=2.0, std=0.0, rng=Rng(0))
        assert_array_equal(out.data, np.full(5, 2.0, dtype=np.float32))

    def test_same_seed_twice_identical(self):
        a = ops.sample_gaussian((64,), 0.0, 1.0, Rng(42))
        b = ops.sample_gaussian((64,), 0.0, 1.0, Rng(42))
        assert_array_equal(a.data, b.data)

    def test_moments_at_scale(self):
        n = 100_000
        out = ops.sample_gaussian((n,), mean=0.0, std=0.02, rng=Rng(7), dtype=np.float64)
        assert abs(out.data.mean()) < 3 * 0.02 / np.sqrt(n)
        assert abs(out.data.std() - 0.02) < 0.01 * 0.02
