"""Finite-difference checks for every differentiable op, plus a negative control."""

import numpy as np
import pytest

from rdgan import Tensor
from rdgan import ops
from rdgan import tensor as T
from rdgan.errors import UsageError
from rdgan.gradcheck import gradcheck
from rdgan.rng import Rng
from rdgan.tensor import record


def leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


RTOL = 1e-4


class TestOpGradients:
    def test_linear(self):
        rng = np.random.default_rng(0)
        x = leaf(rng, (3, 5))
        w = leaf(rng, (4, 5))
        b = leaf(rng, (4,))
        report = gradcheck(lambda: T.tsum(ops.linear(x, w, b)), [("x", x), ("w", w), ("b", b)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_conv2d(self):
        rng = np.random.default_rng(1)
        x = leaf(rng, (2, 3, 6, 6))
        k = leaf(rng, (4, 3, 3, 3))
        report = gradcheck(
            lambda: T.tmean(ops.conv2d(x, k, stride=2, pad=1) * ops.conv2d(x, k, stride=2, pad=1)),
            [("x", x), ("k", k)],
            rtol=RTOL,
        )
        assert report.passed, report.summary()

    def test_deconv2d(self):
        rng = np.random.default_rng(2)
        x = leaf(rng, (2, 3, 4, 4))
        k = leaf(rng, (3, 2, 4, 4))
        report = gradcheck(
            lambda: T.tmean(ops.tanh(ops.deconv2d(x, k, stride=2, pad=1))),
            [("x", x), ("k", k)],
            rtol=RTOL,
        )
        assert report.passed, report.summary()

    def test_conv3d(self):
        rng = np.random.default_rng(3)
        x = leaf(rng, (2, 2, 3, 5, 5))
        k = leaf(rng, (3, 2, 3, 3, 3))
        report = gradcheck(
            lambda: T.tmean(ops.sigmoid(ops.conv3d(x, k, stride=1, pad=1))),
            [("x", x), ("k", k)],
            rtol=RTOL,
        )
        assert report.passed, report.summary()

    def test_maxpool3d_away_from_ties(self):
        rng = np.random.default_rng(4)
        # distinct values guarantee the argmax is stable under perturbation
        data = rng.permutation(4 * 4 * 4).astype(np.float64).reshape(1, 1, 4, 4, 4)
        x = Tensor(data, requires_grad=True)
        report = gradcheck(lambda: T.tsum(ops.maxpool3d(x) * ops.maxpool3d(x)), [("x", x)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_maxpool2d_away_from_ties(self):
        rng = np.random.default_rng(5)
        data = rng.permutation(8 * 8).astype(np.float64).reshape(1, 2, 4, 8)
        x = Tensor(data, requires_grad=True)
        report = gradcheck(lambda: T.tmean(ops.maxpool2d(x)), [("x", x)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_batchnorm_train_mode(self):
        rng = np.random.default_rng(6)
        x = leaf(rng, (4, 3, 3, 3))
        gamma = Tensor(np.ones(3) + 0.1 * rng.normal(size=3), requires_grad=True)
        beta = leaf(rng, (3,))

        def fn():
            stats = ops.RunningStats(mean=Tensor(np.zeros(3)), var=Tensor(np.ones(3)))
            return T.tmean(ops.relu(ops.batchnorm(x, gamma, beta, "train", stats)))

        report = gradcheck(fn, [("x", x), ("gamma", gamma), ("beta", beta)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_batchnorm_eval_mode(self):
        rng = np.random.default_rng(7)
        x = leaf(rng, (4, 3, 2, 2))
        gamma = leaf(rng, (3,))
        beta = leaf(rng, (3,))
        stats = ops.RunningStats(mean=Tensor(rng.normal(size=3)), var=Tensor(np.abs(rng.normal(size=3)) + 0.5))
        report = gradcheck(
            lambda: T.tmean(ops.batchnorm(x, gamma, beta, "eval", stats)),
            [("x", x), ("gamma", gamma), ("beta", beta)],
            rtol=RTOL,
        )
        assert report.passed, report.summary()

    def test_activations(self):
        rng = np.random.default_rng(8)
        # keep inputs away from the relu/leaky kinks at 0
        data = rng.normal(size=(20,))
        data[np.abs(data) < 0.05] = 0.5
        for kind in ("relu", "leaky_relu", "sigmoid", "tanh"):
            x = Tensor(data.copy(), requires_grad=True)
            report = gradcheck(lambda: T.tsum(ops.activation(x, kind) * ops.activation(x, kind)), [("x", x)], rtol=RTOL)
            assert report.passed, f"{kind}:\n{report.summary()}"

    def test_elementwise_and_shape_ops(self):
        rng = np.random.default_rng(9)
        a = leaf(rng, (3, 4))
        b = leaf(rng, (4,))

        def fn():
            y = T.broadcast(T.reshape(a + b, (2, 6)), (2, 6))
            z = T.concat_channels(y, y * y)
            return T.tmean(T.stack([T.tsum(z), T.tsum(z * 0.5)], axis=0))

        report = gradcheck(fn, [("a", a), ("b", b)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_log_and_clip_away_from_edges(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.uniform(0.2, 0.8, size=(10,)), requires_grad=True)
        report = gradcheck(lambda: T.tmean(T.tlog(T.clip(x, 0.1, 0.9))), [("x", x)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_cross_entropy(self):
        rng = np.random.default_rng(11)
        logits = leaf(rng, (5, 4))
        labels = np.array([0, 1, 2, 3, 1])
        report = gradcheck(lambda: ops.cross_entropy(logits, labels), [("logits", logits)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_dropout_with_fixed_mask(self):
        rng = np.random.default_rng(12)
        x = leaf(rng, (30,))
        # reseeding inside fn pins the mask so fn stays deterministic
        report = gradcheck(lambda: T.tmean(ops.dropout(x, 0.4, Rng(99), "train")), [("x", x)], rtol=RTOL)
        assert report.passed, report.summary()

    def test_composite_network_slice(self):
        rng = np.random.default_rng(13)
        x = leaf(rng, (2, 2, 6, 6), scale=0.5)
        k1 = leaf(rng, (3, 2, 3, 3), scale=0.2)
        k2 = leaf(rng, (3, 4, 4, 4), scale=0.2)
        gamma = Tensor(np.ones(3), requires_grad=True)
        beta = Tensor(np.zeros(3), requires_grad=True)

        def fn():
            stats = ops.RunningStats(mean=Tensor(np.zeros(3)), var=Tensor(np.ones(3)))
            h = ops.relu(ops.batchnorm(ops.conv2d(x, k1, stride=1, pad=1), gamma, beta, "train", stats))
            y = ops.tanh(ops.deconv2d(h, k2, stride=2, pad=1))
            return T.tmean(y * y)

        report = gradcheck(fn, [("x", x), ("k1", k1), ("k2", k2), ("gamma", gamma), ("beta", beta)], rtol=RTOL)
        assert report.passed, report.summary()


class TestNegativeControl:
    def test_wrong_backward_rule_is_caught(self):
        # an op whose backward deliberately drops a factor of 2
        def bad_square(t):
            out = t.data * t.data

            def rule(g):
                return (g * t.data,)  # should be 2 * t.data * g

            return record((t,), out, rule)

        x = Tensor(np.array([1.5, -2.0, 3.0]), requires_grad=True)
        report = gradcheck(lambda: T.tsum(bad_square(x)), [("x", x)], rtol=RTOL)
        assert not report.passed
        assert report.failures()[0].name == "x"

    def test_subsampling_requires_rng(self):
        x = Tensor(np.ones(4), requires_grad=True)
        with pytest.raises(UsageError):
            gradcheck(lambda: T.tsum(x), [("x", x)], max_entries=2)

    def test_non_float_parameters_rejected(self):
        # the Tensor constructor coerces exotic dtypes, so plant one directly
        x = Tensor(np.ones(4), requires_grad=True)
        x.data = np.ones(4, dtype=np.float16)
        with pytest.raises(UsageError):
            gradcheck(lambda: T.tsum(x), [("x", x)])

    def test_float32_allowed_with_loose_tolerance(self):
        # single precision is a supported mode with little headroom; it must
        # run, not be rejected
        x = Tensor(np.full(4, 1.5, dtype=np.float32), requires_grad=True)
        report = gradcheck(lambda: T.tsum(T.mul(x, x)), [("x", x)], rtol=0.05, h_base=1e-2)
        assert report.passed

    def test_subsampled_check_runs(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.normal(size=(100,)), requires_grad=True)
        report = gradcheck(lambda: T.tsum(x * x), [("x", x)], max_entries=10, rng=Rng(5))
        assert report.passed
        assert report.params[0].checked <= 10
