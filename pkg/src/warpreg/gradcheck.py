"""Central finite-difference verification of every backward pass.

The harness perturbs selected array entries in place by +-h, re-runs a
scalar forward function, and compares the central difference against the
analytic gradient collected from one backward pass.  Relative error uses a
floor tied to the gradient scale so near-zero entries are judged on an
absolute basis.  ``run_suite`` bundles the standard checks used by both the
test suite and the ``gradcheck`` CLI command; inputs are drawn away from
the known non-smooth sets (ELU at 0, interpolation at integer positions,
the absolute value inside the similarity, the regularizer clamp).
"""

from __future__ import annotations

import numpy as np

from .deform import DeformConvParams, deform_conv2d
from .layers import BatchNormParams, ConvParams, avgpool2, batchnorm, conv2d, elu
from .loss import LossConfig, mean_scalars, ncc_ssd, reg_term, sum_scalars, total_loss
from .model import ModelConfig, ModelParams, PyramidPair, coarse_to_fine_batch, scaled_channels
from .sampling import KernelKind, sample_with_grad, upsample_dvf, warp_image
from .tensor import Tensor, backprop

OP_TOLERANCE = 1e-5
END_TO_END_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5


def _dot(t: Tensor, r: np.ndarray) -> Tensor:
    """Random projection of a tensor to a scalar node (for scalarizing ops)."""
    out = Tensor(np.full((1, 1, 1), float(np.sum(t.values * r))), parents=(t,))

    def _back():
        t.add_grad(out.grad[0, 0, 0] * r)

    out._backward = _back
    return out


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(f, watched, h: float = DEFAULT_STEP, rng=None, per_array: int = 16) -> float:
    """Worst relative error between analytic gradients and central
    differences of ``f``.

    ``f`` is a zero-argument function returning a float; it must re-read
    the watched arrays on every call and have no lasting side effects.
    ``watched`` is a list of ``(value_array, grad_array)`` pairs whose
    gradients were already populated by one backward pass.  Up to
    ``per_array`` entries of each array are probed, chosen by ``rng``
    (all entries when the array is small or rng is None).
    """
    scale = max((float(np.max(np.abs(g))) for _, g in watched if g.size), default=0.0)
    floor = 1e-6 * (1.0 + scale)
    worst = 0.0
    for value, grad in watched:
        flat_v = value.reshape(-1)
        flat_g = grad.reshape(-1)
        if rng is None or flat_v.size <= per_array:
            picks = np.arange(flat_v.size)
        else:
            picks = rng.choice(flat_v.size, size=per_array, replace=False)
        for idx in picks:
            orig = flat_v[idx]
            flat_v[idx] = orig + h
            hi = f()
            flat_v[idx] = orig - h
            lo = f()
            flat_v[idx] = orig
            numeric = (hi - lo) / (2.0 * h)
            worst = max(worst, relative_error(float(flat_g[idx]), numeric, floor))
    return worst


def _away_from(values: np.ndarray, kink: float, margin: float) -> np.ndarray:
    """Push entries within ``margin`` of ``kink`` outward (FD safety)."""
    shifted = values.copy()
    near = np.abs(shifted - kink) < margin
    shifted[near] = kink + margin * np.where(shifted[near] >= kink, 1.0, -1.0)
    return shifted


def _check_conv2d(rng) -> float:
    x = rng.standard_normal((3, 6, 7))
    p = ConvParams.create(3, 4, 3, rng=rng)
    p.bias.value[:] = rng.standard_normal(4)
    r = rng.standard_normal((4, 6, 7))

    def f():
        return float(np.sum(conv2d(Tensor(x), p).values * r))

    xt = Tensor(x)
    backprop(_dot(conv2d(xt, p), r))
    watched = [(x, xt.grad), (p.weight.value, p.weight.grad), (p.bias.value, p.bias.grad)]
    return check_gradients(f, watched, rng=rng)


def _check_batchnorm(rng) -> float:
    xs = [rng.standard_normal((3, 5, 6)) for _ in range(2)]
    p = BatchNormParams(3)
    p.gamma.value[:] = rng.uniform(0.5, 1.5, 3)
    p.beta.value[:] = rng.standard_normal(3)
    rs = [rng.standard_normal((3, 5, 6)) for _ in range(2)]

    def f():
        outs = batchnorm([Tensor(v) for v in xs], p, training=True, update_running=False)
        return float(sum(np.sum(o.values * r) for o, r in zip(outs, rs)))

    ts = [Tensor(v) for v in xs]
    outs = batchnorm(ts, p, training=True, update_running=False)
    backprop(sum_scalars([_dot(o, r) for o, r in zip(outs, rs)]))
    watched = [(xs[0], ts[0].grad), (xs[1], ts[1].grad)]
    watched += [(p.gamma.value, p.gamma.grad), (p.beta.value, p.beta.grad)]
    return check_gradients(f, watched, rng=rng)


def _check_elu(rng) -> float:
    x = _away_from(rng.uniform(-2.0, 2.0, (2, 5, 5)), 0.0, 0.05)
    r = rng.standard_normal((2, 5, 5))

    def f():
        return float(np.sum(elu(Tensor(x)).values * r))

    xt = Tensor(x)
    backprop(_dot(elu(xt), r))
    return check_gradients(f, [(x, xt.grad)], rng=rng)


def _check_avgpool2(rng) -> float:
    x = rng.standard_normal((2, 4, 6))
    r = rng.standard_normal((2, 2, 3))

    def f():
        return float(np.sum(avgpool2(Tensor(x)).values * r))

    xt = Tensor(x)
    backprop(_dot(avgpool2(xt), r))
    return check_gradients(f, [(x, xt.grad)], rng=rng)


def _check_deform_conv2d(rng) -> float:
    x = rng.standard_normal((3, 6, 6))
    p = DeformConvParams.create(3, 4, 3, rng=rng)
    # non-zero offsets keep sampling positions off the bilinear kinks
    p.offset.weight.value[:] = rng.normal(0.0, 0.15, p.offset.weight.value.shape)
    p.offset.bias.value[:] = rng.normal(0.0, 0.2, p.offset.bias.value.shape)
    r = rng.standard_normal((4, 6, 6))

    def f():
        return float(np.sum(deform_conv2d(Tensor(x), p).values * r))

    xt = Tensor(x)
    backprop(_dot(deform_conv2d(xt, p), r))
    watched = [(x, xt.grad)]
    watched += [(q.value, q.grad) for q in p.params()]
    return check_gradients(f, watched, rng=rng)


def _scalar_probe_error(rng, kind: KernelKind) -> float:
    field = rng.standard_normal((1, 7, 7))
    y, x = 2.3, 4.6
    h = DEFAULT_STEP
    _, dy, dx = sample_with_grad(field, 0, y, x, kind)

    def at(yy, xx):
        v, _, _ = sample_with_grad(field, 0, yy, xx, kind)
        return v

    num_dy = (at(y + h, x) - at(y - h, x)) / (2 * h)
    num_dx = (at(y, x + h) - at(y, x - h)) / (2 * h)
    floor = 1e-6 * (1.0 + max(abs(dy), abs(dx)))
    return max(relative_error(dy, num_dy, floor), relative_error(dx, num_dx, floor))


def _check_warp(rng, kind: KernelKind) -> float:
    image = rng.standard_normal((1, 6, 6))
    # fractions bounded away from integers so FD never straddles a kink
    u = rng.uniform(0.12, 0.43, (2, 6, 6)) * rng.choice([-1.0, 1.0], (2, 6, 6))
    r = rng.standard_normal((1, 6, 6))

    def f():
        return float(np.sum(warp_image(Tensor(image), Tensor(u), kind).values * r))

    it, ut = Tensor(image), Tensor(u)
    backprop(_dot(warp_image(it, ut, kind), r))
    return check_gradients(f, [(image, it.grad), (u, ut.grad)], rng=rng)


def _check_upsample_dvf(rng) -> float:
    u = rng.standard_normal((2, 3, 4))
    r = rng.standard_normal((2, 6, 8))

    def f():
        return float(np.sum(upsample_dvf(Tensor(u), 2, KernelKind.CATMULL_ROM).values * r))

    ut = Tensor(u)
    backprop(_dot(upsample_dvf(ut, 2, KernelKind.CATMULL_ROM), r))
    return check_gradients(f, [(u, ut.grad)], rng=rng)


def _check_ncc(rng, detach: bool) -> float:
    a = rng.standard_normal((1, 6, 6))
    b = rng.standard_normal((1, 6, 6))
    a = _away_from(a, float(a.mean()), 0.01)
    b = _away_from(b, float(b.mean()), 0.01)
    eps = 1e-3

    if detach:
        # the detached backward differentiates the loss with the per-image
        # statistics held at their base-point values, so that frozen
        # functional is what the finite difference must probe
        stats = [(v.mean(), np.sqrt(v.var() + eps * eps)) for v in (a, b)]

        def f():
            na = np.abs(a - stats[0][0]) / stats[0][1]
            nb = np.abs(b - stats[1][0]) / stats[1][1]
            return float(np.sum((na - nb) ** 2) / (2.0 * a.size))

        node = ncc_ssd(Tensor(a.copy()), Tensor(b.copy()), eps, True)
        assert abs(f() - float(node.values[0, 0, 0])) < 1e-15
    else:

        def f():
            return float(ncc_ssd(Tensor(a), Tensor(b), eps, False).values[0, 0, 0])

    at, bt = Tensor(a), Tensor(b)
    backprop(ncc_ssd(at, bt, eps, detach))
    return check_gradients(f, [(a, at.grad), (b, bt.grad)], rng=rng)


def _check_reg_term(rng) -> float:
    cfg = LossConfig()
    r = rng.uniform(-0.4, 0.4, (2, 6, 6))    # mean square stays inside (0, 0.25)

    def f():
        return float(reg_term(Tensor(r), cfg).values[0, 0, 0])

    rt = Tensor(r)
    backprop(reg_term(rt, cfg))
    return check_gradients(f, [(r, rt.grad)], rng=rng)


def tiny_model(rng, levels: int = 2):
    """A small randomized model and image batch for end-to-end checks.

    The displacement head, offset branches, and field head are moved off
    their cold-start zeros so no sampling position sits on a kink.
    """
    config = ModelConfig(levels=levels, channels=scaled_channels(0.125))
    params = ModelParams.init(config, rng=rng)
    head = params.layers[-1].conv
    head.weight.value[:] = rng.normal(0.0, 0.05, head.weight.value.shape)
    head.bias.value[:] = rng.normal(0.0, 0.02, head.bias.value.shape)
    for layer in params.layers:
        if isinstance(layer.conv, DeformConvParams):
            layer.conv.offset.weight.value[:] = rng.normal(
                0.0, 0.1, layer.conv.offset.weight.value.shape
            )
            layer.conv.offset.bias.value[:] = rng.normal(
                0.0, 0.1, layer.conv.offset.bias.value.shape
            )
    params.dvf_head.weight.value += rng.normal(0.0, 0.05, params.dvf_head.weight.value.shape)
    params.dvf_head.bias.value[:] = rng.normal(0.0, 0.02, 2)
    size = 2 * config.size_divisor()
    pairs = [
        (rng.uniform(0.0, 1.0, (1, size, size)), rng.uniform(0.0, 1.0, (1, size, size)))
        for _ in range(2)
    ]
    return config, params, pairs


def _check_end_to_end(rng) -> float:
    config, params, pairs = tiny_model(rng)
    # fully attached similarity statistics: the finite difference then sees
    # exactly the function the backward differentiates
    cfg = LossConfig(detach_stats=False)

    def f():
        pyrs = [PyramidPair.build(s, t, config.levels) for s, t in pairs]
        results = coarse_to_fine_batch(pyrs, params, config, training=True, update_running=False)
        losses = [
            total_loss(res, pyr.target, cfg).node for res, pyr in zip(results, pyrs)
        ]
        return float(mean_scalars(losses).values[0, 0, 0])

    for p in params.trainable():
        p.grad.fill(0.0)
    pyrs = [PyramidPair.build(s, t, config.levels) for s, t in pairs]
    results = coarse_to_fine_batch(pyrs, params, config, training=True, update_running=False)
    losses = [total_loss(res, pyr.target, cfg).node for res, pyr in zip(results, pyrs)]
    backprop(mean_scalars(losses))
    watched = [(p.value, p.grad) for _, p in params.named_params()]
    return check_gradients(f, watched, rng=rng, per_array=2)


def run_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative FD error per operation; keys are stable for the CLI."""
    rng = np.random.default_rng(seed)
    return {
        "conv2d": _check_conv2d(rng),
        "batchnorm": _check_batchnorm(rng),
        "elu": _check_elu(rng),
        "avgpool2": _check_avgpool2(rng),
        "deform_conv2d": _check_deform_conv2d(rng),
        "sample_bilinear": _scalar_probe_error(rng, KernelKind.BILINEAR),
        "sample_cr_bicubic": _scalar_probe_error(rng, KernelKind.CATMULL_ROM),
        "warp_bilinear": _check_warp(rng, KernelKind.BILINEAR),
        "warp_catmull_rom": _check_warp(rng, KernelKind.CATMULL_ROM),
        "upsample_dvf": _check_upsample_dvf(rng),
        "ncc_ssd": _check_ncc(rng, detach=True),
        "ncc_ssd_attached": _check_ncc(rng, detach=False),
        "reg_term": _check_reg_term(rng),
        "end_to_end": _check_end_to_end(rng),
    }


def suite_tolerances() -> dict[str, float]:
    tols = {name: OP_TOLERANCE for name in (
        "conv2d", "batchnorm", "elu", "avgpool2", "deform_conv2d",
        "sample_bilinear", "sample_cr_bicubic", "warp_bilinear",
        "warp_catmull_rom", "upsample_dvf", "ncc_ssd", "ncc_ssd_attached",
        "reg_term",
    )}
    tols["end_to_end"] = END_TO_END_TOLERANCE
    return tols
