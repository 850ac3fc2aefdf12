"""Overlap and displacement-accuracy metrics."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError


def dice_jaccard(mask_a: np.ndarray, mask_b: np.ndarray) -> tuple[float, float]:
    """Dice and Jaccard overlap of two boolean masks.

    Two empty masks agree perfectly: (1, 1).  One empty mask overlaps
    nothing: (0, 0).  Otherwise dice = 2i / (|a| + |b|) and jaccard =
    i / |union|, which are linked by dice = 2j / (1 + j).
    """
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    na = int(a.sum())
    nb = int(b.sum())
    if na == 0 and nb == 0:
        return 1.0, 1.0
    if na == 0 or nb == 0:
        return 0.0, 0.0
    inter = int(np.logical_and(a, b).sum())
    union = na + nb - inter
    return 2.0 * inter / (na + nb), inter / union


def endpoint_error(u: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """Mean and max Euclidean distance between two displacement fields."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"field shapes differ: {u.shape} vs {v.shape}")
    if u.ndim != 3 or u.shape[0] != 2:
        raise ShapeError(f"expected (2, H, W) fields, got {u.shape}")
    err = np.sqrt((u[0] - v[0]) ** 2 + (u[1] - v[1]) ** 2)
    return float(err.mean()), float(err.max())


def threshold_mask(image: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Foreground mask of an intensity image: values >= threshold."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ShapeError(f"expected a single-channel image, got {arr.shape}")
        arr = arr[0]
    return arr >= threshold
