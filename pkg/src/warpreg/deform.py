"""Deformable 2D convolution (learned per-tap sampling offsets).

Each output pixel convolves ``k * k`` input taps whose positions are the
regular grid positions plus per-pixel offsets predicted by a small linear
convolution over the same input (the offset branch).  Offsets start at
exactly zero (zero-initialized branch), so a fresh deformable layer
computes precisely the regular convolution away from the border; taps are
fetched with bilinear interpolation and clamp-to-edge, so offset gradients
come from the bilinear position derivative.

Offset channel layout: channels ``2 * j`` and ``2 * j + 1`` hold the (dy,
dx) offset of tap ``j = a * k + b``, row-major over the kernel window.
"""

from __future__ import annotations

import numpy as np

from .layers import ConvParams, conv2d
from .sampling import KernelKind, sample_grid, sample_grid_backward
from .tensor import ShapeError, Tensor


class DeformConvParams:
    """Main conv weights plus the zero-initialized offset branch."""

    def __init__(self, main: ConvParams, offset: ConvParams):
        if offset.out_channels != 2 * main.k * main.k:
            raise ShapeError(
                f"offset branch must emit {2 * main.k * main.k} channels, "
                f"got {offset.out_channels}"
            )
        if offset.in_channels != main.in_channels:
            raise ShapeError("offset branch input channels must match the main conv")
        self.main = main
        self.offset = offset

    @classmethod
    def create(
        cls, in_c: int, out_c: int, k: int = 3, rng: np.random.Generator | None = None
    ) -> "DeformConvParams":
        main = ConvParams.create(in_c, out_c, k, rng=rng, init="fan_in")
        offset = ConvParams.create(in_c, 2 * k * k, k, init="zero")
        return cls(main, offset)

    @property
    def in_channels(self) -> int:
        return self.main.in_channels

    @property
    def out_channels(self) -> int:
        return self.main.out_channels

    @property
    def k(self) -> int:
        return self.main.k

    def params(self):
        return self.main.params() + self.offset.params()


def deform_conv2d(x: Tensor, p: DeformConvParams) -> Tensor:
    """Deformable convolution, stride 1, output size equals input size."""
    if x.channels != p.in_channels:
        raise ShapeError(f"expected {p.in_channels} input channels, got {x.channels}")
    k = p.k
    pad = p.main.pad
    c_in, h, w = x.values.shape
    n_taps = k * k

    off_node = conv2d(x, p.offset)                       # (2*k*k, H, W)
    off = off_node.values.reshape(n_taps, 2, h, w)

    ys, xs = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    ay, ax = np.divmod(np.arange(n_taps), k)             # tap offsets within the window
    py = ys[None] + (ay - pad)[:, None, None] + off[:, 0]
    px = xs[None] + (ax - pad)[:, None, None] + off[:, 1]

    samples_flat, cache = sample_grid(x.values, py.ravel(), px.ravel(), KernelKind.BILINEAR)
    samples = samples_flat.reshape(c_in, n_taps, h, w)
    wr = p.main.weight.value.reshape(p.out_channels, c_in, n_taps)
    out_vals = np.tensordot(wr, samples, axes=([1, 2], [0, 1]))
    out_vals += p.main.bias.value[:, None, None]
    out = Tensor(out_vals, parents=(x, off_node))

    def _back():
        go = out.grad
        p.main.bias.grad += go.sum(axis=(1, 2))
        dwr = np.tensordot(go, samples, axes=([1, 2], [2, 3]))           # (out, in, taps)
        p.main.weight.grad += dwr.reshape(p.main.weight.value.shape)
        d_samples = np.tensordot(wr, go, axes=([0], [0]))                # (in, taps, H, W)
        x.ensure_grad()
        d_py, d_px = sample_grid_backward(
            cache, d_samples.reshape(c_in, -1), field_grad=x.grad, want_pos_grad=True
        )
        d_off = np.empty((n_taps, 2, h, w))
        d_off[:, 0] = d_py.reshape(n_taps, h, w)
        d_off[:, 1] = d_px.reshape(n_taps, h, w)
        off_node.add_grad(d_off.reshape(2 * n_taps, h, w))

    out._backward = _back
    return out
