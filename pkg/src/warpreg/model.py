"""Coarse-to-fine deformable registration model.

The displacement network is a fixed 8-layer schedule of stride-1
convolutions, each followed by batchnorm and ELU except the last, with a
2x average pooling after the second layer block, so the predicted
displacement field comes out at half the input resolution.  Three of the
middle layers are deformable.  The final layer starts at exactly zero, so a
fresh model predicts the zero field everywhere (cold-start identity).

A separate head restores full resolution: kernel upsampling of the
half-resolution field (values doubled into fine-grid pixel units) followed
by a learned 2->2 convolution initialized to the identity.

Registration runs coarse to fine over an image pyramid with one shared set
of weights.  At each level the accumulated field pre-warps that level's
original source, the network estimates a residual field from the
(pre-warped source, target) pair, the residual is added, and the total is
kernel-upsampled (magnitude scaled by 2) to the next finer level.  Warped
images after each coarser-level update are recorded for auxiliary loss
terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deform import DeformConvParams, deform_conv2d
from .layers import BatchNormParams, ConvParams, avgpool2, batchnorm, conv2d, elu
from .sampling import KernelKind, downsample2_mean, upsample_dvf, warp_image
from .tensor import Param, ShapeError, Tensor, add, concat_channels

DEFAULT_CHANNELS: tuple[tuple[int, int], ...] = (
    (2, 64),
    (64, 64),
    (64, 64),
    (64, 32),
    (32, 32),
    (32, 16),
    (16, 16),
    (16, 2),
)

# pooling happens after this layer's conv+bn+elu block
POOL_AFTER_LAYER = 1


def scaled_channels(scale: float) -> tuple[tuple[int, int], ...]:
    """The default channel schedule with interior widths scaled down.

    The 2-channel input and 2-channel output are fixed; every hidden width
    is scaled and floored at 1.  ``scale=1`` returns the default schedule.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    widths = [DEFAULT_CHANNELS[0][0]] + [out for _, out in DEFAULT_CHANNELS]
    scaled = (
        [widths[0]]
        + [max(1, round(w * scale)) for w in widths[1:-1]]
        + [widths[-1]]
    )
    return tuple(zip(scaled[:-1], scaled[1:]))


@dataclass(frozen=True)
class ModelConfig:
    """Static architecture description; everything needed to rebuild params."""

    levels: int = 4
    channels: tuple[tuple[int, int], ...] = DEFAULT_CHANNELS
    kernel: int = 3
    deform_layers: tuple[int, ...] = (4, 5, 6)
    image_warp_kernel: KernelKind = KernelKind.BILINEAR
    dvf_kernel: KernelKind = KernelKind.CATMULL_ROM
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.levels < 1:
            raise ShapeError(f"levels must be >= 1, got {self.levels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ShapeError(f"kernel must be odd and positive, got {self.kernel}")
        chans = tuple((int(i), int(o)) for i, o in self.channels)
        object.__setattr__(self, "channels", chans)
        if len(chans) < 3:
            raise ShapeError("schedule needs at least three layers")
        if chans[0][0] != 2 or chans[-1][1] != 2:
            raise ShapeError("schedule must map a 2-channel pair to a 2-channel field")
        for (_, o1), (i2, _) in zip(chans[:-1], chans[1:]):
            if o1 != i2:
                raise ShapeError(f"channel chain broken: {o1} feeds {i2}")
        if any(i <= 0 or o <= 0 for i, o in chans):
            raise ShapeError("channel counts must be positive")
        deform = tuple(sorted(int(d) for d in self.deform_layers))
        object.__setattr__(self, "deform_layers", deform)
        if len(deform) != 3 or len(set(deform)) != 3:
            raise ShapeError("exactly three distinct deformable layers are required")
        if any(d < 0 or d >= len(chans) - 1 for d in deform):
            raise ShapeError("deformable layers must be hidden layers, not the head")
        if not isinstance(self.image_warp_kernel, KernelKind):
            object.__setattr__(self, "image_warp_kernel", KernelKind.parse(self.image_warp_kernel))
        if not isinstance(self.dvf_kernel, KernelKind):
            object.__setattr__(self, "dvf_kernel", KernelKind.parse(self.dvf_kernel))

    @property
    def n_layers(self) -> int:
        return len(self.channels)

    def size_divisor(self) -> int:
        # one halving per coarser pyramid level, one more inside the net
        return 2**self.levels


@dataclass
class LayerParams:
    conv: ConvParams | DeformConvParams
    bn: BatchNormParams | None


class ModelParams:
    """All weights, shared across pyramid levels."""

    def __init__(self, layers: list[LayerParams], dvf_head: ConvParams):
        self.layers = layers
        self.dvf_head = dvf_head

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator | int = 0) -> "ModelParams":
        """Cold-start initialization: hidden convs fan-in random, offset
        branches and the final displacement layer zero, head conv identity.
        A fresh model therefore maps every pair to the zero field.
        """
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        layers: list[LayerParams] = []
        last = config.n_layers - 1
        for i, (c_in, c_out) in enumerate(config.channels):
            if i in config.deform_layers:
                conv = DeformConvParams.create(c_in, c_out, config.kernel, rng=rng)
            else:
                init = "zero" if i == last else "fan_in"
                conv = ConvParams.create(c_in, c_out, config.kernel, rng=rng, init=init)
            bn = (
                None
                if i == last
                else BatchNormParams(c_out, eps=config.bn_eps, momentum=config.bn_momentum)
            )
            layers.append(LayerParams(conv, bn))
        dvf_head = ConvParams.create(2, 2, config.kernel, init="identity")
        return cls(layers, dvf_head)

    def named_params(self) -> list[tuple[str, Param]]:
        out: list[tuple[str, Param]] = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer.conv, DeformConvParams):
                out.append((f"layer{i}.conv.weight", layer.conv.main.weight))
                out.append((f"layer{i}.conv.bias", layer.conv.main.bias))
                out.append((f"layer{i}.offset.weight", layer.conv.offset.weight))
                out.append((f"layer{i}.offset.bias", layer.conv.offset.bias))
            else:
                out.append((f"layer{i}.conv.weight", layer.conv.weight))
                out.append((f"layer{i}.conv.bias", layer.conv.bias))
            if layer.bn is not None:
                out.append((f"layer{i}.bn.gamma", layer.bn.gamma))
                out.append((f"layer{i}.bn.beta", layer.bn.beta))
        out.append(("dvf_head.weight", self.dvf_head.weight))
        out.append(("dvf_head.bias", self.dvf_head.bias))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out: list[tuple[str, np.ndarray]] = []
        for i, layer in enumerate(self.layers):
            if layer.bn is not None:
                out.append((f"layer{i}.bn.running_mean", layer.bn.running_mean))
                out.append((f"layer{i}.bn.running_var", layer.bn.running_var))
        return out

    def trainable(self) -> list[Param]:
        return [p for _, p in self.named_params()]


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams


def build_pyramid(image: Tensor, levels: int) -> list[Tensor]:
    """Mean-pooled image pyramid, finest first; plain data (leaf tensors)."""
    if levels < 1:
        raise ShapeError("levels must be >= 1")
    _, h, w = image.values.shape
    div = 2 ** (levels - 1)
    if h % div or w % div:
        raise ShapeError(f"size ({h}, {w}) not divisible by 2^(levels-1) = {div}")
    out = [Tensor(image.values)]
    for _ in range(levels - 1):
        out.append(Tensor(downsample2_mean(out[-1].values)))
    return out


@dataclass
class PyramidPair:
    """Source and target pyramids of one image pair, finest first."""

    source: list[Tensor]
    target: list[Tensor]

    @classmethod
    def build(cls, source_values, target_values, levels: int) -> "PyramidPair":
        src = np.asarray(source_values, dtype=np.float64)
        tgt = np.asarray(target_values, dtype=np.float64)
        if src.ndim == 2:
            src = src[None]
        if tgt.ndim == 2:
            tgt = tgt[None]
        if src.shape != tgt.shape:
            raise ShapeError(f"source {src.shape} and target {tgt.shape} differ")
        return cls(
            source=build_pyramid(Tensor(src), levels),
            target=build_pyramid(Tensor(tgt), levels),
        )

    @property
    def levels(self) -> int:
        return len(self.source)


def displacement_net(
    inputs: list[Tensor],
    params: ModelParams,
    config: ModelConfig,
    training: bool = True,
    update_running: bool = True,
) -> list[Tensor]:
    """Run the 8-layer network on a batch of 2-channel pair images.

    Batchnorm couples the batch in training mode, which is why the whole
    batch goes through together.  Output fields are at half the input
    resolution, 2 channels each.
    """
    if not inputs:
        raise ShapeError("empty batch")
    for x in inputs:
        if x.channels != config.channels[0][0]:
            raise ShapeError(f"expected {config.channels[0][0]}-channel input, got {x.channels}")
        if x.height % 2 or x.width % 2:
            raise ShapeError(f"input size ({x.height}, {x.width}) must be even")
    xs = inputs
    last = config.n_layers - 1
    for i, layer in enumerate(params.layers):
        if isinstance(layer.conv, DeformConvParams):
            xs = [deform_conv2d(x, layer.conv) for x in xs]
        else:
            xs = [conv2d(x, layer.conv) for x in xs]
        if i != last:
            xs = batchnorm(xs, layer.bn, training=training, update_running=update_running)
            xs = [elu(x) for x in xs]
        if i == POOL_AFTER_LAYER:
            xs = [avgpool2(x) for x in xs]
    return xs


def upsample_head(u_half: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Restore a half-resolution field to full resolution: kernel upsampling
    (displacements doubled) then the learned identity-initialized 2->2 conv.
    """
    return conv2d(upsample_dvf(u_half, 2, config.dvf_kernel), params.dvf_head)


@dataclass
class CoarseToFineResult:
    """Forward outputs of one registered pair.

    ``level_warps`` holds ``(level, warped)`` for levels 1 .. levels-1 in
    ascending order: the level-l source warped by the just-updated field,
    used for the auxiliary similarity terms.  ``residual_0`` is the finest
    level's residual field (regularizer input).
    """

    u_final: Tensor
    warped_final: Tensor
    residual_0: Tensor
    level_warps: list[tuple[int, Tensor]] = field(default_factory=list)
    level_pairs: list[tuple[Tensor, Tensor]] = field(default_factory=list)


def coarse_to_fine_batch(
    pyrs: list[PyramidPair],
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    update_running: bool = True,
) -> list[CoarseToFineResult]:
    """Registration forward pass for a batch of pyramids."""
    if not pyrs:
        raise ShapeError("empty batch")
    n = len(pyrs)
    for pyr in pyrs:
        if pyr.levels != config.levels:
            raise ShapeError(f"pyramid has {pyr.levels} levels, config wants {config.levels}")
        coarsest = pyr.source[-1]
        if coarsest.height % 2 or coarsest.width % 2:
            raise ShapeError(
                f"coarsest level size ({coarsest.height}, {coarsest.width}) must be even; "
                f"full size must be divisible by {config.size_divisor()}"
            )
    top = config.levels - 1
    u = [
        Tensor(np.zeros((2, pyr.source[top].height, pyr.source[top].width)))
        for pyr in pyrs
    ]
    residual_0: list[Tensor] = [None] * n
    level_warps: list[list[tuple[int, Tensor]]] = [[] for _ in range(n)]
    level_pairs: list[list[tuple[Tensor, Tensor]]] = [[] for _ in range(n)]

    for lvl in range(top, -1, -1):
        warped = [
            warp_image(pyr.source[lvl], u[i], config.image_warp_kernel)
            for i, pyr in enumerate(pyrs)
        ]
        net_in = [
            concat_channels(warped[i], pyr.target[lvl]) for i, pyr in enumerate(pyrs)
        ]
        halves = displacement_net(net_in, params, config, training, update_running)
        residuals = [upsample_head(h, params, config) for h in halves]
        u = [add(u[i], residuals[i]) for i in range(n)]
        if lvl == 0:
            residual_0 = residuals
        else:
            for i, pyr in enumerate(pyrs):
                w2 = warp_image(pyr.source[lvl], u[i], config.image_warp_kernel)
                level_warps[i].append((lvl, w2))
                level_pairs[i].append((w2, pyr.target[lvl]))
            u = [upsample_dvf(ui, 2, config.dvf_kernel) for ui in u]

    results = []
    for i, pyr in enumerate(pyrs):
        final = warp_image(pyr.source[0], u[i], config.image_warp_kernel)
        results.append(
            CoarseToFineResult(
                u_final=u[i],
                warped_final=final,
                residual_0=residual_0[i],
                level_warps=list(reversed(level_warps[i])),
                level_pairs=list(reversed(level_pairs[i])),
            )
        )
    return results


def coarse_to_fine_forward(
    pyr: PyramidPair,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    update_running: bool = True,
) -> CoarseToFineResult:
    """Single-pair convenience wrapper around the batch forward."""
    return coarse_to_fine_batch([pyr], params, config, training, update_running)[0]


def register(source, target, checkpoint: Checkpoint) -> tuple[np.ndarray, np.ndarray]:
    """Register one pair with a trained model.

    Returns ``(u, warped)``: the displacement field (2, H, W) mapping the
    source onto the target under backward warping, and the warped source
    (1, H, W).  Inference mode: batchnorm uses its running statistics, so
    the result is a pure function of the checkpoint and the two images.
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.ndim == 2:
        src = src[None]
    if tgt.ndim == 2:
        tgt = tgt[None]
    if src.shape != tgt.shape:
        raise ShapeError(f"source {src.shape} and target {tgt.shape} differ")
    div = checkpoint.config.size_divisor()
    _, h, w = src.shape
    if h % div or w % div:
        raise ShapeError(f"size ({h}, {w}) not divisible by 2^levels = {div}")
    pyr = PyramidPair.build(src, tgt, checkpoint.config.levels)
    result = coarse_to_fine_batch(
        [pyr], checkpoint.params, checkpoint.config, training=False, update_running=False
    )[0]
    return result.u_final.values.copy(), result.warped_final.values.copy()
