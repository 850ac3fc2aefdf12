"""Unsupervised training of the registration model on image pairs.

Each iteration samples a mini-batch of pairs, runs the coarse-to-fine
forward in training mode (batch statistics, running stats updated), adds
the per-pair losses, backpropagates, and takes one Adam step.  The loop is
deterministic in its seed.  Any non-finite loss term aborts immediately,
naming the term and the iteration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .loss import Adam, LossBreakdown, LossConfig, mean_scalars, total_loss
from .model import (
    Checkpoint,
    CoarseToFineResult,
    ModelConfig,
    ModelParams,
    PyramidPair,
    coarse_to_fine_batch,
)
from .tensor import backprop


class NumericalError(RuntimeError):
    """A loss term stopped being finite during training."""

    def __init__(self, term: str, iteration: int):
        super().__init__(f"non-finite loss term {term!r} at iteration {iteration}")
        self.term = term
        self.iteration = iteration


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict] = field(repr=False, default_factory=list)


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    n = len(parts)
    level_terms = [
        sum(p.level_terms[i] for p in parts) / n for i in range(len(parts[0].level_terms))
    ]
    return LossBreakdown(
        data=sum(p.data for p in parts) / n,
        reg=sum(p.reg for p in parts) / n,
        level_terms=level_terms,
        total=sum(p.total for p in parts) / n,
        node=mean_scalars([p.node for p in parts]),
    )


def _check_finite(breakdown: LossBreakdown, iteration: int) -> None:
    for term, value in breakdown.term_items():
        if not np.isfinite(value):
            raise NumericalError(term, iteration)


def train_model(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    config: ModelConfig,
    *,
    iters: int,
    lr: float = 1e-3,
    loss_cfg: LossConfig | None = None,
    batch_size: int = 4,
    seed: int = 0,
    progress=None,
) -> TrainResult:
    """Train a fresh model on (source, target) image pairs.

    ``progress``, when given, is called as ``progress(iteration,
    breakdown)`` after each step.  Returns the trained checkpoint plus one
    history row per iteration (keys: iteration, data, reg, level_*, total).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        raise ValueError("no training pairs")
    loss_cfg = loss_cfg or LossConfig()
    rng = np.random.default_rng(seed)
    params = ModelParams.init(config, rng=rng)
    optim = Adam(params.trainable(), lr=lr)

    # pyramids only depend on the data: precompute values once
    pyramids = [PyramidPair.build(src, tgt, config.levels) for src, tgt in pairs]
    n = len(pyramids)

    history: list[dict] = []
    for it in range(iters):
        batch_idx = rng.choice(n, size=batch_size, replace=batch_size > n)
        batch = [pyramids[int(i)] for i in batch_idx]
        # non-finite pixels can surface as bad sample positions before any
        # loss term exists; map that to the same error family
        try:
            results = coarse_to_fine_batch(batch, params, config, training=True)
            parts = [
                total_loss(res, pyr.target, loss_cfg)
                for res, pyr in zip(results, batch)
            ]
        except FloatingPointError:
            raise NumericalError("displacement_field", it) from None
        breakdown = _mean_breakdown(parts)
        _check_finite(breakdown, it)
        optim.zero_grad()
        backprop(breakdown.node)
        optim.step()
        row = {"iteration": it}
        row.update(dict(breakdown.term_items()))
        history.append(row)
        if progress is not None:
            progress(it, breakdown)
    return TrainResult(checkpoint=Checkpoint(config=config, params=params), history=history)


def history_header(levels: int) -> list[str]:
    return ["iteration", "data", "reg"] + [f"level_{i}" for i in range(1, levels)] + ["total"]


def write_history_csv(path, history: list[dict], levels: int) -> None:
    """Loss curve as CSV; floats via repr so identical runs give identical
    bytes and values re-parse exactly."""
    header = history_header(levels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in history:
            writer.writerow(
                [row["iteration"]] + [repr(float(row[k])) for k in header[1:]]
            )


def evaluate_loss(
    result: CoarseToFineResult, target_pyramid, loss_cfg: LossConfig | None = None
) -> LossBreakdown:
    """Loss breakdown of an already-computed forward pass (no backward)."""
    return total_loss(result, target_pyramid, loss_cfg or LossConfig())
