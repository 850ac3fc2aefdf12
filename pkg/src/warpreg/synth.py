"""Synthetic training and evaluation pairs with known deformations.

A pair is built from a band-limited random texture and a smooth random
displacement field: the texture is the source and its warp under the field
is the target, so the stored field is exactly the displacement a perfect
registration of source onto target should recover (backward-warp
convention).  Fields come from a coarse grid of random vectors upsampled
with the Catmull-Rom kernel and rescaled so the maximum displacement
magnitude equals the requested amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .sampling import KernelKind, sample_grid, warp_image
from .tensor import Tensor


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    count: int = 8
    amplitude: float = 5.0
    control_grid: int = 16    # approximate control-point spacing in pixels
    seed: int = 0

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        if self.control_grid < 4:
            raise ValueError(f"control_grid must be >= 4, got {self.control_grid}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


def _coarse_upsample(coarse: np.ndarray, size: int) -> np.ndarray:
    """Catmull-Rom resize of a (C, G, G) grid onto (C, size, size), centers
    aligned."""
    g = coarse.shape[1]
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    py = ((ys.ravel() + 0.5) * g / size) - 0.5
    px = ((xs.ravel() + 0.5) * g / size) - 0.5
    out, _ = sample_grid(coarse, py, px, KernelKind.CATMULL_ROM)
    return out.reshape(coarse.shape[0], size, size)


def gen_smooth_dvf(
    size: int, amplitude: float, control_grid: int, rng: np.random.Generator
) -> np.ndarray:
    """Smooth random displacement field (2, size, size).

    Random control vectors on a grid with roughly ``control_grid`` pixel
    spacing are upsampled and then rescaled so the largest displacement
    magnitude equals ``amplitude`` exactly (zero field for amplitude 0).
    """
    g = max(4, round(size / control_grid))
    u = _coarse_upsample(rng.uniform(-1.0, 1.0, (2, g, g)), size)
    mag = np.sqrt(u[0] ** 2 + u[1] ** 2)
    peak = float(mag.max())
    if amplitude == 0.0 or peak == 0.0:
        return np.zeros_like(u)
    return u * (amplitude / peak)


def make_texture(size: int, rng: np.random.Generator) -> np.ndarray:
    """Band-limited random texture (1, size, size) normalized to [0, 1]."""
    g = max(4, size // 6)
    tex = _coarse_upsample(rng.uniform(0.0, 1.0, (1, g, g)), size)
    lo, hi = float(tex.min()), float(tex.max())
    if hi == lo:
        return np.full_like(tex, 0.5)
    return (tex - lo) / (hi - lo)


def make_pair(
    cfg: SynthConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One (source, target, field) triple.

    The source is the texture itself; the target is the texture backward-
    warped by the generated field, so warping the source by the stored
    field reproduces the target and the field is the registration answer.
    """
    texture = make_texture(cfg.size, rng)
    u = gen_smooth_dvf(cfg.size, cfg.amplitude, cfg.control_grid, rng)
    target = warp_image(Tensor(texture), Tensor(u), KernelKind.CATMULL_ROM).values
    return texture, target, u


def pair_paths(out_dir, index: int) -> tuple[Path, Path, Path]:
    base = Path(out_dir)
    stem = f"pair{index:03d}"
    return (
        base / f"{stem}_source.imgf",
        base / f"{stem}_target.imgf",
        base / f"{stem}_field.dvf2",
    )


def write_dataset(cfg: SynthConfig, out_dir) -> list[tuple[Path, Path, Path]]:
    """Generate ``cfg.count`` pairs under ``out_dir``; fully deterministic
    in ``cfg.seed``.  Also writes PGM previews next to the raw images."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    written = []
    for i in range(cfg.count):
        source, target, u = make_pair(cfg, rng)
        src_path, tgt_path, dvf_path = pair_paths(out, i)
        formats.write_imgf(src_path, source)
        formats.write_imgf(tgt_path, target)
        formats.write_dvf2(dvf_path, u)
        formats.write_pgm(src_path.with_suffix(".pgm"), source)
        formats.write_pgm(tgt_path.with_suffix(".pgm"), target)
        written.append((src_path, tgt_path, dvf_path))
    return written


def load_dataset(data_dir, with_fields: bool = False):
    """Read back every pair written by :func:`write_dataset`, in index order."""
    base = Path(data_dir)
    sources = sorted(base.glob("pair*_source.imgf"))
    if not sources:
        raise FileNotFoundError(f"no pair*_source.imgf files under {base}")
    pairs = []
    for src_path in sources:
        stem = src_path.name.replace("_source.imgf", "")
        tgt_path = base / f"{stem}_target.imgf"
        dvf_path = base / f"{stem}_field.dvf2"
        source = formats.read_imgf(src_path)
        target = formats.read_imgf(tgt_path)
        if with_fields:
            pairs.append((source, target, formats.read_dvf2(dvf_path)))
        else:
            pairs.append((source, target))
    return pairs


def hold_out_pairs(cfg: SynthConfig, count: int, offset_seed: int = 10_000):
    """Fresh evaluation pairs drawn from a seed disjoint from ``cfg.seed``."""
    eval_cfg = SynthConfig(
        size=cfg.size,
        count=count,
        amplitude=cfg.amplitude,
        control_grid=cfg.control_grid,
        seed=cfg.seed + offset_seed,
    )
    rng = np.random.default_rng(eval_cfg.seed)
    return [make_pair(eval_cfg, rng) for _ in range(count)]
