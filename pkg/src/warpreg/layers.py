"""Convolution, batch normalization, ELU, and average pooling.

All layers are hand-rolled on numpy with explicit backward hooks.
Convolutions are stride 1 with zero padding (k - 1) / 2, so spatial size is
preserved; kernels must be odd and square.  Batch statistics use the
population convention (1 / N variance) everywhere, matching the rest of the
package.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Param, ShapeError, Tensor


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ConvParams:
    """Weights for a stride-1, size-preserving 2D convolution.

    ``weight`` is (out_c, in_c, k, k); ``bias`` is (out_c,).  Both carry
    gradient buffers.  ``init`` picks the starting values:

    * ``"fan_in"``: uniform in +-1/sqrt(in_c * k * k), zero bias,
    * ``"zero"``: all zeros (used for displacement heads and offset branches),
    * ``"identity"``: pass-through when in_c == out_c (center tap 1).
    """

    def __init__(self, weight, bias, stride: int = 1):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
            raise ShapeError(f"conv weight must be (out, in, k, k), got {weight.shape}")
        if weight.shape[2] % 2 != 1:
            raise ShapeError(f"kernel size must be odd, got {weight.shape[2]}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match out={weight.shape[0]}")
        if stride != 1:
            raise ShapeError("only stride 1 is supported")
        self.weight = Param(weight)
        self.bias = Param(bias)
        self.stride = 1

    @classmethod
    def create(
        cls,
        in_c: int,
        out_c: int,
        k: int = 3,
        rng: np.random.Generator | None = None,
        init: str = "fan_in",
    ) -> "ConvParams":
        if init == "fan_in":
            if rng is None:
                raise ValueError("fan_in init needs an rng")
            weight = _fan_in_uniform(rng, (out_c, in_c, k, k), in_c * k * k)
        elif init == "zero":
            weight = np.zeros((out_c, in_c, k, k))
        elif init == "identity":
            if in_c != out_c:
                raise ShapeError("identity init needs in_c == out_c")
            weight = np.zeros((out_c, in_c, k, k))
            for c in range(out_c):
                weight[c, c, k // 2, k // 2] = 1.0
        else:
            raise ValueError(f"unknown init {init!r}")
        return cls(weight, np.zeros(out_c))

    @property
    def in_channels(self) -> int:
        return self.weight.value.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.value.shape[0]

    @property
    def k(self) -> int:
        return self.weight.value.shape[2]

    @property
    def pad(self) -> int:
        return (self.k - 1) // 2

    def params(self) -> list[Param]:
        return [self.weight, self.bias]


def _windows(values: np.ndarray, k: int, pad: int) -> np.ndarray:
    padded = np.pad(values, ((0, 0), (pad, pad), (pad, pad)))
    # (C, H, W, k, k) view onto the padded array
    return sliding_window_view(padded, (k, k), axis=(1, 2))


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Stride-1 zero-padded convolution; output spatial size equals input."""
    if x.channels != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} input channels, got {x.channels}")
    win = _windows(x.values, p.k, p.pad)
    out_vals = np.tensordot(p.weight.value, win, axes=([1, 2, 3], [0, 3, 4]))
    out_vals += p.bias.value[:, None, None]
    out = Tensor(out_vals, parents=(x,))

    def _back():
        go = out.grad
        p.bias.grad += go.sum(axis=(1, 2))
        p.weight.grad += np.tensordot(go, win, axes=([1, 2], [1, 2]))
        # input grad: correlate go with the spatially flipped kernel,
        # in/out channel roles swapped
        wf = p.weight.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gwin = _windows(go, p.k, p.pad)
        x.add_grad(np.tensordot(wf, gwin, axes=([1, 2, 3], [0, 3, 4])))

    out._backward = _back
    return out


class BatchNormParams:
    """Per-channel scale/shift plus running statistics.

    Running stats follow the EMA ``running <- (1 - momentum) * running +
    momentum * batch`` with population batch variance, and are the
    statistics used when ``training=False``.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        if channels <= 0:
            raise ShapeError("channels must be positive")
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = float(eps)
        self.momentum = float(momentum)

    @property
    def channels(self) -> int:
        return self.gamma.value.shape[0]

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]


def batchnorm(
    xs: list[Tensor],
    p: BatchNormParams,
    training: bool = True,
    update_running: bool = True,
) -> list[Tensor]:
    """Normalize a batch of same-shape tensors per channel.

    In training mode statistics are taken over the whole batch (all samples,
    all pixels, population variance) and the backward pass differentiates
    through them, which couples the batch: each input's gradient depends on
    every output's gradient.  In inference mode the stored running stats act
    as constants and samples stay independent.
    """
    if not xs:
        raise ShapeError("batchnorm needs at least one input")
    shape = xs[0].values.shape
    for x in xs:
        if x.values.shape != shape:
            raise ShapeError("batchnorm inputs must share one shape")
        if x.channels != p.channels:
            raise ShapeError(f"batchnorm expects {p.channels} channels, got {x.channels}")
    n = len(xs)
    c, h, w = shape
    gamma = p.gamma.value[:, None, None]
    beta = p.beta.value[:, None, None]

    if not training:
        scale = p.gamma.value / np.sqrt(p.running_var + p.eps)  # (C,)
        outs = []
        for x in xs:
            xhat = (x.values - p.running_mean[:, None, None]) / np.sqrt(
                p.running_var[:, None, None] + p.eps
            )
            out = Tensor(gamma * xhat + beta, parents=(x,))

            def _back(x=x, out=out, xhat=xhat):
                go = out.grad
                p.beta.grad += go.sum(axis=(1, 2))
                p.gamma.grad += (go * xhat).sum(axis=(1, 2))
                x.add_grad(go * scale[:, None, None])

            out._backward = _back
            outs.append(out)
        return outs

    stacked = np.stack([x.values for x in xs])               # (N, C, H, W)
    mean = stacked.mean(axis=(0, 2, 3))
    var = stacked.var(axis=(0, 2, 3))                        # population (1/N)
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = (stacked - mean[None, :, None, None]) * inv[None, :, None, None]

    if update_running:
        p.running_mean += p.momentum * (mean - p.running_mean)
        p.running_var += p.momentum * (var - p.running_var)

    # joint node: outputs are channel slices of one phantom tensor so the
    # coupled backward runs once, after every slice has its gradient
    joint = Tensor(np.zeros((n * c, h, w)), parents=tuple(xs))
    joint.grad = np.zeros((n * c, h, w))
    out_vals = gamma[None] * xhat + beta[None]

    outs = []
    for i in range(n):
        out = Tensor(out_vals[i], parents=(joint,))

        def _collect(i=i, out=out):
            joint.grad[i * c : (i + 1) * c] += out.grad

        out._backward = _collect
        outs.append(out)

    def _joint_back():
        go = joint.grad.reshape(n, c, h, w)
        p.beta.grad += go.sum(axis=(0, 2, 3))
        p.gamma.grad += (go * xhat).sum(axis=(0, 2, 3))
        dxhat = go * gamma[None]
        m1 = dxhat.mean(axis=(0, 2, 3))
        m2 = (dxhat * xhat).mean(axis=(0, 2, 3))
        dx = inv[None, :, None, None] * (
            dxhat - m1[None, :, None, None] - xhat * m2[None, :, None, None]
        )
        for i, x in enumerate(xs):
            x.add_grad(dx[i])

    joint._backward = _joint_back
    return outs


def elu(x: Tensor) -> Tensor:
    """ELU with alpha = 1: identity for positive values, exp(v) - 1 below."""
    v = x.values
    out_vals = np.where(v > 0.0, v, np.expm1(v))
    out = Tensor(out_vals, parents=(x,))

    def _back():
        # for v <= 0 the local derivative exp(v) equals out + 1
        x.add_grad(out.grad * np.where(v > 0.0, 1.0, out_vals + 1.0))

    out._backward = _back
    return out


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; requires even spatial size."""
    c, h, w = x.values.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2 needs even spatial size, got ({h}, {w})")
    out = Tensor(x.values.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)), parents=(x,))

    def _back():
        g = np.repeat(np.repeat(out.grad, 2, axis=1), 2, axis=2)
        x.add_grad(g * 0.25)

    out._backward = _back
    return out
