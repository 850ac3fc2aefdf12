"""Convolution, batchnorm, ELU, and pooling against hand oracles."""

import numpy as np
import pytest

from warpreg import (
    BatchNormParams,
    ConvParams,
    ShapeError,
    Tensor,
    avgpool2,
    backprop,
    batchnorm,
    conv2d,
    elu,
)


def conv_reference(x, weight, bias):
    """Direct-loop convolution oracle (stride 1, zero padding)."""
    out_c, in_c, k, _ = weight.shape
    _, h, w = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((out_c, h, w))
    for o in range(out_c):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for i in range(in_c):
                    for a in range(k):
                        for b in range(k):
                            acc += weight[o, i, a, b] * xp[i, y + a, xx + b]
                out[o, y, xx] = acc + bias[o]
    return out


class TestConv2d:
    def test_matches_direct_loop(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 6, 7))
        p = ConvParams.create(3, 4, 3, rng=rng)
        p.bias.value[:] = rng.standard_normal(4)
        got = conv2d(Tensor(x), p).values
        want = conv_reference(x, p.weight.value, p.bias.value)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_all_ones_kernel_counts_taps(self):
        """With an all-ones kernel on a constant image, each output counts
        the in-bounds taps: 9 in the interior, 6 on edges, 4 in corners."""
        p = ConvParams(np.ones((1, 1, 3, 3)), np.zeros(1))
        out = conv2d(Tensor(np.ones((1, 4, 4))), p).values[0]
        assert out[1, 1] == 9.0
        assert out[0, 1] == 6.0
        assert out[0, 0] == 4.0

    def test_preserves_spatial_size(self):
        rng = np.random.default_rng(1)
        p = ConvParams.create(2, 5, 5, rng=rng)
        out = conv2d(Tensor(np.zeros((2, 9, 11))), p)
        assert out.values.shape == (5, 9, 11)

    def test_rejects_channel_mismatch(self):
        rng = np.random.default_rng(2)
        p = ConvParams.create(3, 4, 3, rng=rng)
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((2, 4, 4))), p)

    def test_rejects_even_kernel_and_stride(self):
        with pytest.raises(ShapeError):
            ConvParams(np.ones((1, 1, 2, 2)), np.zeros(1))
        with pytest.raises(ShapeError):
            ConvParams(np.ones((1, 1, 3, 3)), np.zeros(1), stride=2)

    def test_identity_init_is_passthrough(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((3, 5, 5))
        p = ConvParams.create(3, 3, 3, init="identity")
        np.testing.assert_array_equal(conv2d(Tensor(x), p).values, x)

    def test_gradients_accumulate_across_calls(self):
        """Two backward passes through the same params sum their grads."""
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 4, 4))
        p = ConvParams.create(1, 1, 3, rng=rng)

        def run_once():
            out = conv2d(Tensor(x), p)
            out.grad = np.ones_like(out.values)
            out._backward()

        run_once()
        once = p.weight.grad.copy()
        run_once()
        np.testing.assert_allclose(p.weight.grad, 2 * once, rtol=1e-14)


class TestBatchNorm:
    def test_normalizes_batch_statistics(self):
        """With unit gamma and zero beta the outputs have zero batch mean
        and per-channel variance var/(var+eps), the exact normalized value."""
        rng = np.random.default_rng(5)
        xs = [Tensor(rng.standard_normal((3, 6, 6)) * 4 + 2) for _ in range(3)]
        p = BatchNormParams(3)
        outs = batchnorm(xs, p, training=True)
        stacked = np.stack([o.values for o in outs])
        pop_var = np.stack([x.values for x in xs]).var(axis=(0, 2, 3))
        np.testing.assert_allclose(stacked.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(
            stacked.var(axis=(0, 2, 3)), pop_var / (pop_var + p.eps), rtol=1e-12
        )

    def test_gamma_beta_applied(self):
        rng = np.random.default_rng(6)
        xs = [Tensor(rng.standard_normal((2, 4, 4))) for _ in range(2)]
        p = BatchNormParams(2)
        p.gamma.value[:] = [2.0, 3.0]
        p.beta.value[:] = [-1.0, 0.5]
        outs = batchnorm(xs, p, training=True, update_running=False)
        stacked = np.stack([o.values for o in outs])
        pop_var = np.stack([x.values for x in xs]).var(axis=(0, 2, 3))
        want_std = np.array([2.0, 3.0]) * np.sqrt(pop_var / (pop_var + p.eps))
        np.testing.assert_allclose(stacked.mean(axis=(0, 2, 3)), [-1.0, 0.5], atol=1e-12)
        np.testing.assert_allclose(
            np.sqrt(stacked.var(axis=(0, 2, 3))), want_std, rtol=1e-12
        )

    def test_running_stats_ema(self):
        """One training step moves running stats by momentum times the
        batch-minus-running difference; population batch variance."""
        rng = np.random.default_rng(7)
        vals = rng.standard_normal((1, 4, 4)) * 2 + 3
        p = BatchNormParams(1, momentum=0.1)
        batchnorm([Tensor(vals)], p, training=True)
        np.testing.assert_allclose(p.running_mean, 0.1 * vals.mean(), rtol=1e-12)
        np.testing.assert_allclose(
            p.running_var, 0.9 * 1.0 + 0.1 * vals.var(ddof=0), rtol=1e-12
        )

    def test_infer_mode_uses_running_stats(self):
        rng = np.random.default_rng(8)
        p = BatchNormParams(1)
        p.running_mean[:] = 2.0
        p.running_var[:] = 4.0
        x = rng.standard_normal((1, 3, 3))
        (out,) = batchnorm([Tensor(x)], p, training=False)
        np.testing.assert_allclose(out.values, (x - 2.0) / np.sqrt(4.0 + p.eps), rtol=1e-12)

    def test_infer_mode_leaves_running_stats(self):
        p = BatchNormParams(2)
        before = (p.running_mean.copy(), p.running_var.copy())
        batchnorm([Tensor(np.random.default_rng(9).standard_normal((2, 4, 4)))], p, training=False)
        np.testing.assert_array_equal(p.running_mean, before[0])
        np.testing.assert_array_equal(p.running_var, before[1])

    def test_training_couples_batch_gradients(self):
        """In training mode one sample's gradient depends on the other
        sample through the shared statistics."""
        rng = np.random.default_rng(10)
        xs = [Tensor(rng.standard_normal((1, 2, 2))) for _ in range(2)]
        outs = batchnorm(xs, BatchNormParams(1), training=True, update_running=False)
        from warpreg.loss import sum_scalars
        from warpreg.gradcheck import _dot

        backprop(sum_scalars([_dot(outs[0], np.ones((1, 2, 2)))]))
        assert xs[1].grad is not None
        assert np.any(xs[1].grad != 0.0)

    def test_rejects_mixed_shapes(self):
        with pytest.raises(ShapeError):
            batchnorm(
                [Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 2, 3)))],
                BatchNormParams(1),
            )


class TestElu:
    def test_positive_passthrough_negative_expm1(self):
        x = np.array([[[-2.0, -0.5, 0.0, 0.5, 2.0]]])
        out = elu(Tensor(x)).values
        want = np.where(x > 0, x, np.expm1(x))
        np.testing.assert_array_equal(out, want)

    def test_continuous_at_zero(self):
        eps = 1e-9
        lo = elu(Tensor(np.full((1, 1, 1), -eps))).values[0, 0, 0]
        hi = elu(Tensor(np.full((1, 1, 1), eps))).values[0, 0, 0]
        assert abs(hi - lo) < 3e-9

    def test_derivative_values(self):
        x = np.array([[[-1.0, 1.0]]])
        xt = Tensor(x)
        out = elu(xt)
        out.grad = np.ones_like(x)
        out._backward()
        np.testing.assert_allclose(xt.grad[0, 0], [np.exp(-1.0), 1.0], rtol=1e-12)


class TestAvgPool2:
    def test_block_means(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        out = avgpool2(Tensor(x)).values
        want = np.array([[[2.5, 4.5], [10.5, 12.5]]])
        np.testing.assert_array_equal(out, want)

    def test_rejects_odd_size(self):
        with pytest.raises(ShapeError):
            avgpool2(Tensor(np.zeros((1, 3, 4))))

    def test_backward_spreads_quarter(self):
        x = Tensor(np.zeros((1, 2, 2)))
        out = avgpool2(x)
        out.grad = np.full((1, 1, 1), 8.0)
        out._backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 2, 2), 2.0))
