"""Interpolation kernel comparison.

Two views per kernel: static resampling quality (RMSE of a down/up round
trip on a band-limited field) and its effect as the displacement-field
resampler during a short fixed-seed training run (everything else held
constant, including the bilinear image warp).
"""

from __future__ import annotations

import csv

from .model import ModelConfig, scaled_channels
from .sampling import KernelKind, resample_error, smooth_test_field
from .synth import SynthConfig, make_pair
from .train import train_model

import numpy as np

BENCH_KERNELS = (
    KernelKind.NEAREST,
    KernelKind.BILINEAR,
    KernelKind.CATMULL_ROM,
    KernelKind.BSPLINE3,
)


def bench_dataset(size: int = 32, count: int = 8, seed: int = 0):
    cfg = SynthConfig(size=size, count=count, amplitude=2.0, control_grid=8, seed=seed)
    rng = np.random.default_rng(cfg.seed)
    return [make_pair(cfg, rng)[:2] for _ in range(cfg.count)]


def interp_bench(
    size: int = 32,
    iters: int = 200,
    seed: int = 0,
    levels: int = 2,
    width_scale: float = 0.125,
) -> list[dict]:
    """One row per kernel: static resampling RMSE and final training loss
    with that kernel as the displacement-field resampler.

    Training is full-batch (every step sees the whole dataset), so the
    loss trace is free of minibatch sampling noise and the final history
    row is the exact training-set loss at the last step.
    """
    field = smooth_test_field(64)
    pairs = bench_dataset(size=size, seed=seed)
    rows = []
    for kind in BENCH_KERNELS:
        config = ModelConfig(
            levels=levels,
            channels=scaled_channels(width_scale),
            dvf_kernel=kind,
        )
        result = train_model(
            pairs, config, iters=iters, seed=seed, batch_size=len(pairs)
        )
        rows.append(
            {
                "kernel": kind.value,
                "resample_rmse": resample_error(field, kind),
                "final_loss": result.history[-1]["total"],
            }
        )
    return rows


def write_bench_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kernel", "resample_rmse", "final_loss"])
        for row in rows:
            writer.writerow(
                [row["kernel"], repr(float(row["resample_rmse"])), repr(float(row["final_loss"]))]
            )
