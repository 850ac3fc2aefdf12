"""Input validation helpers for the estimator and CLI entry points."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError


def as_image(values) -> np.ndarray:
    """Coerce to a finite (1, H, W) float64 image."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise ShapeError(f"expected an (H, W) or (1, H, W) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def as_field(values) -> np.ndarray:
    """Coerce to a finite (2, H, W) float64 displacement field."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ShapeError(f"expected a (2, H, W) field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field contains non-finite values")
    return arr


def check_pair_stack(X, divisor: int = 1) -> np.ndarray:
    """Validate a stack of image pairs of shape (n_pairs, 2, H, W).

    Channel 0 of each pair is the source (moving) image, channel 1 the
    target (fixed) image.  ``divisor`` is the required spatial divisibility
    (2**levels for a given model depth).
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ShapeError(
            f"expected pairs of shape (n_pairs, 2, H, W), got {getattr(arr, 'shape', None)}"
        )
    if arr.shape[0] == 0:
        raise ShapeError("need at least one pair")
    if not np.all(np.isfinite(arr)):
        raise ValueError("pair stack contains non-finite values")
    _, _, h, w = arr.shape
    if h % divisor or w % divisor:
        raise ShapeError(f"spatial size ({h}, {w}) must be divisible by {divisor}")
    return arr


def pad_to_divisor(image: np.ndarray, divisor: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Edge-pad (C, H, W) on the bottom/right up to the next multiple of
    ``divisor``; returns the padded array and the (pad_h, pad_w) applied."""
    _, h, w = image.shape
    pad_h = (-h) % divisor
    pad_w = (-w) % divisor
    if pad_h == 0 and pad_w == 0:
        return image, (0, 0)
    padded = np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    return padded, (pad_h, pad_w)
