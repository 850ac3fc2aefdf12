"""Interpolation kernels and differentiable resampling.

Four separable kernels share one gather/scatter code path: nearest,
bilinear, Catmull-Rom bicubic, and direct cubic B-spline (no prefilter, so
it smooths rather than interpolates).  A sampling position ``p`` is split
into ``i = floor(p)`` and fraction ``t = p - i``; each kernel contributes
weights at fixed integer tap offsets from ``i``.  Tap indices are clamped
into the grid (clamp-to-edge), which also zeroes the position derivative
once every tap of a row collapses onto the same edge texel.

Conventions used across the package:

* displacement fields ``u`` are 2-channel tensors, channel 0 = row (y)
  displacement, channel 1 = column (x) displacement,
* warping is backward: ``out[c, y, x] = image[c, y + uy, x + ux]``,
* resizing by 2 aligns pixel centers, ``src = (dst + 0.5) / 2 - 0.5``.
"""

from __future__ import annotations

import enum

import numpy as np

from .tensor import ShapeError, Tensor


class KernelKind(enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    CATMULL_ROM = "catmull_rom"
    BSPLINE3 = "bspline3"

    @classmethod
    def parse(cls, name: str) -> "KernelKind":
        try:
            return cls(name)
        except ValueError:
            options = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown kernel {name!r}; expected one of {options}") from None


# -- kernel weights ---------------------------------------------------------


def cr_weights(t):
    """Catmull-Rom weights for taps at offsets (-1, 0, 1, 2) from floor(p).

    Partition of unity for every t in [0, 1); exact at knots (t = 0 gives
    (0, 1, 0, 0)); C1 across knots.
    """
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            (-t3 + 2.0 * t2 - t) / 2.0,
            (3.0 * t3 - 5.0 * t2 + 2.0) / 2.0,
            (-3.0 * t3 + 4.0 * t2 + t) / 2.0,
            (t3 - t2) / 2.0,
        ]
    )


def _cr_dweights(t):
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    return np.stack(
        [
            (-3.0 * t2 + 4.0 * t - 1.0) / 2.0,
            (9.0 * t2 - 10.0 * t) / 2.0,
            (-9.0 * t2 + 8.0 * t + 1.0) / 2.0,
            (3.0 * t2 - 2.0 * t) / 2.0,
        ]
    )


def bspline3_weights(t):
    """Uniform cubic B-spline weights for taps at offsets (-1, 0, 1, 2).

    Applied directly to samples (no prefilter): reproduces constants and
    linear ramps but does not pass through the data at knots (t = 0 mixes
    taps as (1/6, 4/6, 1/6, 0)).
    """
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    s = 1.0 - t
    return np.stack(
        [
            s * s * s / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ]
    )


def _bspline3_dweights(t):
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    s = 1.0 - t
    return np.stack(
        [
            -s * s / 2.0,
            (9.0 * t2 - 12.0 * t) / 6.0,
            (-9.0 * t2 + 6.0 * t + 3.0) / 6.0,
            t2 / 2.0,
        ]
    )


def _nearest_weights(t):
    t = np.asarray(t, dtype=np.float64)
    hi = (t >= 0.5).astype(np.float64)
    return np.stack([1.0 - hi, hi])


def _bilinear_weights(t):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([1.0 - t, t])


def _bilinear_dweights(t):
    t = np.asarray(t, dtype=np.float64)
    one = np.ones_like(t)
    return np.stack([-one, one])


_KERNELS = {
    KernelKind.NEAREST: ((0, 1), _nearest_weights, lambda t: np.zeros((2,) + np.shape(t))),
    KernelKind.BILINEAR: ((0, 1), _bilinear_weights, _bilinear_dweights),
    KernelKind.CATMULL_ROM: ((-1, 0, 1, 2), cr_weights, _cr_dweights),
    KernelKind.BSPLINE3: ((-1, 0, 1, 2), bspline3_weights, _bspline3_dweights),
}


# -- vectorized gather / scatter ---------------------------------------------


def _tap_indices(pos, offsets, dim):
    """floor/fraction split plus clamped integer tap rows, shape (T, P)."""
    base = np.floor(pos)
    t = pos - base
    base = base.astype(np.int64)
    taps = np.clip(base[None, :] + np.asarray(offsets, dtype=np.int64)[:, None], 0, dim - 1)
    return taps, t


def sample_grid(values: np.ndarray, py: np.ndarray, px: np.ndarray, kind: KernelKind):
    """Sample every channel of ``values`` (C, H, W) at flat positions
    ``(py, px)`` with the given kernel.  Returns ``(out, cache)`` where
    ``out`` has shape (C, P) and ``cache`` feeds :func:`sample_grid_backward`.
    """
    if values.ndim != 3:
        raise ShapeError(f"expected (C, H, W) field, got shape {values.shape}")
    if not (np.all(np.isfinite(py)) and np.all(np.isfinite(px))):
        raise FloatingPointError("non-finite sampling positions")
    _, h, w = values.shape
    offsets, wfn, dwfn = _KERNELS[kind]
    iy, ty = _tap_indices(py, offsets, h)
    ix, tx = _tap_indices(px, offsets, w)
    wy = wfn(ty)
    wx = wfn(tx)
    # gathered taps, shape (C, Ty, Tx, P)
    v = values[:, iy[:, None, :], ix[None, :, :]]
    out = np.einsum("ctup,tp,up->cp", v, wy, wx, optimize=True)
    cache = (iy, ix, ty, tx, wy, wx, v, h, w, dwfn)
    return out, cache


def sample_grid_backward(cache, d_out, field_grad=None, want_pos_grad=False):
    """Accumulate sampling gradients.

    ``d_out`` has shape (C, P).  When ``field_grad`` (C, H, W) is given the
    tap contributions are scattered into it in place.  When
    ``want_pos_grad`` is set, returns ``(d_py, d_px)`` of shape (P,), the
    loss gradient w.r.t. the sampling positions (summed over channels).
    """
    iy, ix, ty, tx, wy, wx, v, h, w, dwfn = cache
    if field_grad is not None:
        c = field_grad.shape[0]
        pair_w = wy[:, None, :] * wx[None, :, :]              # (Ty, Tx, P)
        contrib = d_out[:, None, None, :] * pair_w[None]      # (C, Ty, Tx, P)
        flat = iy[:, None, :] * w + ix[None, :, :]            # (Ty, Tx, P)
        idx = (np.arange(c, dtype=np.int64)[:, None, None, None] * (h * w)) + flat[None]
        # bincount is much faster than np.add.at for this scatter
        field_grad += np.bincount(
            idx.ravel(), weights=contrib.ravel(), minlength=c * h * w
        ).reshape(field_grad.shape)
    if not want_pos_grad:
        return None
    dwy = dwfn(ty)
    dwx = dwfn(tx)
    gy = np.einsum("ctup,tp,up->cp", v, dwy, wx, optimize=True)
    gx = np.einsum("ctup,tp,up->cp", v, wy, dwx, optimize=True)
    d_py = np.einsum("cp,cp->p", d_out, gy)
    d_px = np.einsum("cp,cp->p", d_out, gx)
    return d_py, d_px


# -- scalar probes ------------------------------------------------------------


def _sample_scalar(field, channel, y, x, kind):
    values = field.values if isinstance(field, Tensor) else np.asarray(field, dtype=np.float64)
    if not 0 <= channel < values.shape[0]:
        raise ShapeError(f"channel {channel} out of range")
    py = np.asarray([float(y)])
    px = np.asarray([float(x)])
    out, cache = sample_grid(values[channel : channel + 1], py, px, kind)
    return out, cache


def sample_bilinear(field, channel: int, y: float, x: float) -> float:
    """Bilinear sample of one channel at a continuous (y, x) position."""
    out, _ = _sample_scalar(field, channel, y, x, KernelKind.BILINEAR)
    return float(out[0, 0])


def sample_cr_bicubic(field, channel: int, y: float, x: float) -> float:
    """Catmull-Rom bicubic sample of one channel at a continuous position."""
    out, _ = _sample_scalar(field, channel, y, x, KernelKind.CATMULL_ROM)
    return float(out[0, 0])


def sample_bspline3(field, channel: int, y: float, x: float) -> float:
    """Direct cubic B-spline sample (smoothing; not an interpolant)."""
    out, _ = _sample_scalar(field, channel, y, x, KernelKind.BSPLINE3)
    return float(out[0, 0])


def sample_with_grad(field, channel: int, y: float, x: float, kind: KernelKind):
    """Scalar sample plus its derivative w.r.t. the (y, x) position."""
    out, cache = _sample_scalar(field, channel, y, x, kind)
    d = sample_grid_backward(cache, np.ones((1, 1)), want_pos_grad=True)
    return float(out[0, 0]), float(d[0][0]), float(d[1][0])


# -- differentiable image warping ---------------------------------------------


def _position_grids(h, w):
    ys, xs = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    return ys, xs


def warp_image(image: Tensor, u: Tensor, kind: KernelKind = KernelKind.BILINEAR) -> Tensor:
    """Backward-warp ``image`` by displacement field ``u``.

    ``out[c, y, x] = image[c, y + u[0, y, x], x + u[1, y, x]]`` with the
    chosen kernel and clamp-to-edge sampling.  Gradients flow to both the
    image taps and, through the kernel's position derivative, to ``u``.
    """
    if u.channels != 2:
        raise ShapeError(f"displacement field must have 2 channels, got {u.channels}")
    if u.values.shape[1:] != image.values.shape[1:]:
        raise ShapeError(
            f"field size {u.values.shape[1:]} does not match image {image.values.shape[1:]}"
        )
    c, h, w = image.values.shape
    ys, xs = _position_grids(h, w)
    py = (ys + u.values[0]).ravel()
    px = (xs + u.values[1]).ravel()
    out_flat, cache = sample_grid(image.values, py, px, kind)
    out = Tensor(out_flat.reshape(c, h, w), parents=(image, u))

    def _back():
        d_out = out.grad.reshape(c, -1)
        image.ensure_grad()
        d_py, d_px = sample_grid_backward(
            cache, d_out, field_grad=image.grad, want_pos_grad=True
        )
        u.ensure_grad()
        u.grad[0] += d_py.reshape(h, w)
        u.grad[1] += d_px.reshape(h, w)

    out._backward = _back
    return out


def upsample_dvf(u: Tensor, factor: int = 2, kind: KernelKind = KernelKind.CATMULL_ROM) -> Tensor:
    """Resample a displacement field onto a grid ``factor``x finer and scale
    the displacement values by ``factor`` so they stay in pixel units of the
    finer grid.  Only factor 2 is supported.
    """
    if factor != 2:
        raise ShapeError(f"only factor 2 upsampling is supported, got {factor}")
    if u.channels != 2:
        raise ShapeError(f"displacement field must have 2 channels, got {u.channels}")
    c, h, w = u.values.shape
    h2, w2 = 2 * h, 2 * w
    ys, xs = _position_grids(h2, w2)
    py = ((ys + 0.5) / 2.0 - 0.5).ravel()
    px = ((xs + 0.5) / 2.0 - 0.5).ravel()
    out_flat, cache = sample_grid(u.values, py, px, kind)
    out = Tensor(2.0 * out_flat.reshape(c, h2, w2), parents=(u,))

    def _back():
        d_out = 2.0 * out.grad.reshape(c, -1)
        u.ensure_grad()
        sample_grid_backward(cache, d_out, field_grad=u.grad)

    out._backward = _back
    return out


# -- plain-array resizing helpers ---------------------------------------------


def downsample2_mean(values: np.ndarray) -> np.ndarray:
    """Halve a (C, H, W) array spatially by averaging 2x2 blocks."""
    c, h, w = values.shape
    if h % 2 or w % 2:
        raise ShapeError(f"spatial size ({h}, {w}) not divisible by 2")
    return values.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def upsample2_values(values: np.ndarray, kind: KernelKind) -> np.ndarray:
    """Double a (C, H, W) array spatially (align centers, values unscaled)."""
    c, h, w = values.shape
    ys, xs = _position_grids(2 * h, 2 * w)
    py = ((ys + 0.5) / 2.0 - 0.5).ravel()
    px = ((xs + 0.5) / 2.0 - 0.5).ravel()
    out, _ = sample_grid(values, py, px, kind)
    return out.reshape(c, 2 * h, 2 * w)


def smooth_test_field(size: int = 64) -> np.ndarray:
    """Band-limited single-channel field used for resampling comparisons."""
    ys, xs = _position_grids(size, size)
    f = (
        np.sin(2.0 * np.pi * xs / 16.0) * np.cos(2.0 * np.pi * ys / 16.0)
        + 0.5 * np.sin(2.0 * np.pi * (xs + ys) / 24.0)
        + 0.25 * np.cos(2.0 * np.pi * (xs - 2.0 * ys) / 20.0)
    )
    return f[None]


def resample_error(field, kind: KernelKind) -> float:
    """RMSE of a down-by-2 / up-by-2 round trip against the original field."""
    values = field.values if isinstance(field, Tensor) else np.asarray(field, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    rec = upsample2_values(downsample2_mean(values), kind)
    return float(np.sqrt(np.mean((rec - values) ** 2)))
