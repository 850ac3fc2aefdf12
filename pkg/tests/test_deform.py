"""Deformable convolution against its linear-convolution reference."""

import numpy as np
import pytest

from warpreg.deform import DeformConvParams, deform_conv2d
from warpreg.layers import ConvParams, conv2d
from warpreg.tensor import ShapeError, Tensor, backprop


def interior(values, margin):
    return values[:, margin:-margin, margin:-margin]


class TestDeformConvParams:
    def test_offset_channel_count_checked(self):
        main = ConvParams.create(2, 4, 3, rng=np.random.default_rng(0))
        bad = ConvParams.create(2, 17, 3, init="zero")
        with pytest.raises(ShapeError, match="18 channels"):
            DeformConvParams(main, bad)

    def test_offset_input_channels_checked(self):
        main = ConvParams.create(2, 4, 3, rng=np.random.default_rng(0))
        bad = ConvParams.create(3, 18, 3, init="zero")
        with pytest.raises(ShapeError, match="input channels"):
            DeformConvParams(main, bad)

    def test_create_zero_initializes_offsets(self):
        p = DeformConvParams.create(3, 5, rng=np.random.default_rng(1))
        assert np.all(p.offset.weight.value == 0)
        assert np.all(p.offset.bias.value == 0)

    def test_params_cover_both_branches(self):
        p = DeformConvParams.create(2, 4, rng=np.random.default_rng(2))
        assert len(p.params()) == 4


class TestZeroOffsetEquivalence:
    def test_matches_regular_conv_in_interior(self):
        # fresh offsets are exactly zero, so away from the border (where
        # zero padding and clamp-to-edge differ) the two ops agree to the
        # last bit of the shared tensordot contraction
        rng = np.random.default_rng(3)
        for trial in range(20):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            h = int(rng.integers(6, 12))
            w = int(rng.integers(6, 12))
            p = DeformConvParams.create(c_in, c_out, rng=rng)
            x = Tensor(rng.normal(size=(c_in, h, w)))
            got = deform_conv2d(x, p)
            want = conv2d(x, p.main)
            diff = np.abs(interior(got.values, 1) - interior(want.values, 1))
            assert diff.max() < 1e-12

    def test_border_uses_edge_clamping(self):
        # with zero offsets the border rows differ from zero padding
        rng = np.random.default_rng(4)
        p = DeformConvParams.create(1, 1, rng=rng)
        x = Tensor(np.full((1, 8, 8), 3.0))
        got = deform_conv2d(x, p)
        want = conv2d(x, p.main)
        assert np.abs(got.values[0, 0] - want.values[0, 0]).max() > 1e-8


class TestConstantOffsets:
    def make_params_with_bias(self, rng, dy, dx, c_in=1, c_out=1, k=3):
        p = DeformConvParams.create(c_in, c_out, k, rng=rng)
        bias = np.empty(2 * k * k)
        bias[0::2] = dy
        bias[1::2] = dx
        p.offset.bias.value[:] = bias
        return p

    def test_integer_offset_equals_shifted_conv(self):
        # constant (1, 2) offset on every tap: the deformable output at
        # (y, x) equals the regular conv output at (y + 1, x + 2)
        rng = np.random.default_rng(5)
        p = self.make_params_with_bias(rng, 1.0, 2.0)
        x = Tensor(rng.normal(size=(1, 12, 12)))
        got = deform_conv2d(x, p)
        want = conv2d(x, p.main)
        np.testing.assert_allclose(
            got.values[:, 3:-4, 3:-5], want.values[:, 4:-3, 5:-3], rtol=0, atol=1e-12
        )

    def test_half_pixel_offset_averages_neighbors(self):
        # bilinear taps at x + 0.5 average the taps at x and x + 1, so a
        # constant (0, 0.5) offset averages the linear parts of neighboring
        # conv outputs while the bias enters once
        rng = np.random.default_rng(6)
        p = self.make_params_with_bias(rng, 0.0, 0.5)
        p.main.bias.value[:] = 0.7
        x = Tensor(rng.normal(size=(1, 10, 14)))
        got = deform_conv2d(x, p)
        want = conv2d(x, p.main)
        bias = p.main.bias.value[:, None, None]
        avg = 0.5 * ((want.values[:, :, 2:-3] - bias) + (want.values[:, :, 3:-2] - bias))
        np.testing.assert_allclose(
            got.values[:, 2:-2, 2:-3], (avg + bias)[:, 2:-2], rtol=0, atol=1e-12
        )


class TestDeformGradients:
    def test_offset_branch_receives_gradient(self):
        rng = np.random.default_rng(7)
        p = DeformConvParams.create(2, 3, rng=rng)
        # break the zero-offset symmetry so position gradients are nonzero
        p.offset.weight.value[:] = 0.05 * rng.normal(size=p.offset.weight.value.shape)
        x = Tensor(rng.normal(size=(2, 9, 9)))
        out = deform_conv2d(x, p)
        backprop(out)
        assert np.any(p.offset.weight.grad != 0)
        assert np.any(p.offset.bias.grad != 0)
        assert np.any(p.main.weight.grad != 0)
        assert np.any(x.grad != 0)

    def test_input_channel_mismatch(self):
        p = DeformConvParams.create(2, 3, rng=np.random.default_rng(8))
        with pytest.raises(ShapeError, match="input channels"):
            deform_conv2d(Tensor(np.zeros((3, 8, 8))), p)
