"""Similarity objective, displacement regularizer, and Adam.

The data term normalizes each image by its own statistics,
``n = |img - mean| / sqrt(var + eps^2)``, and takes half the mean squared
difference of the normalized images.  It is bounded (below 2 for eps -> 0),
symmetric in its arguments, and invariant to affine intensity rescaling of
either image.  The absolute value uses subgradient 0 at its kink, and by
default the per-image statistics are treated as constants in the backward
pass (``detach_stats``).

The regularizer penalizes the mean squared magnitude of the finest-level
residual displacement, clamped to [0, 0.25]; its gradient vanishes outside
the open interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Param, ShapeError, Tensor, zero_grads


@dataclass(frozen=True)
class LossConfig:
    eps: float = 1e-3
    lam: float = 1e-3
    clamp_lo: float = 0.0
    clamp_hi: float = 0.25
    detach_stats: bool = True

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not self.clamp_lo < self.clamp_hi:
            raise ValueError("clamp interval must be non-empty")


def _scalar_node(value: float, parents=()) -> Tensor:
    return Tensor(np.full((1, 1, 1), float(value)), parents=parents)


def ncc_ssd(a: Tensor, b: Tensor, eps: float = 1e-3, detach_stats: bool = True) -> Tensor:
    """Statistics-normalized squared-difference similarity, as a scalar node."""
    if a.values.shape != b.values.shape:
        raise ShapeError(f"image shapes differ: {a.values.shape} vs {b.values.shape}")
    av, bv = a.values, b.values
    n = av.size
    mu_a, mu_b = av.mean(), bv.mean()
    s_a = np.sqrt(av.var() + eps * eps)
    s_b = np.sqrt(bv.var() + eps * eps)
    na = np.abs(av - mu_a) / s_a
    nb = np.abs(bv - mu_b) / s_b
    diff = na - nb
    out = _scalar_node(np.sum(diff * diff) / (2.0 * n), parents=(a, b))

    def _back():
        g = out.grad[0, 0, 0]
        coeff = g * diff / n                                    # dD/dn_a = -dD/dn_b
        sign_a = np.sign(av - mu_a)
        sign_b = np.sign(bv - mu_b)
        if detach_stats:
            a.add_grad(coeff * sign_a / s_a)
            b.add_grad(-coeff * sign_b / s_b)
        else:
            # full chain through the mean and the variance of each image
            ga = coeff * sign_a
            da = (ga - ga.mean()) / s_a - (av - mu_a) * np.mean(coeff * na) / (s_a * s_a)
            gb = -coeff * sign_b
            db = (gb - gb.mean()) / s_b - (bv - mu_b) * np.mean(-coeff * nb) / (s_b * s_b)
            a.add_grad(da)
            b.add_grad(db)

    out._backward = _back
    return out


def reg_term(residual: Tensor, cfg: LossConfig) -> Tensor:
    """Clamped mean squared residual magnitude, weighted by ``cfg.lam``."""
    if residual.channels != 2:
        raise ShapeError(f"residual must be a 2-channel field, got {residual.channels}")
    r = residual.values
    n_pix = r.shape[1] * r.shape[2]
    m = float(np.sum(r * r) / n_pix)
    clamped = min(max(m, cfg.clamp_lo), cfg.clamp_hi)
    out = _scalar_node(cfg.lam * clamped, parents=(residual,))

    def _back():
        if cfg.clamp_lo < m < cfg.clamp_hi:
            g = out.grad[0, 0, 0]
            residual.add_grad(g * cfg.lam * 2.0 * r / n_pix)

    out._backward = _back
    return out


def sum_scalars(nodes: list[Tensor]) -> Tensor:
    out = _scalar_node(sum(n.values[0, 0, 0] for n in nodes), parents=tuple(nodes))

    def _back():
        for n in nodes:
            n.add_grad(out.grad)

    out._backward = _back
    return out


def mean_scalars(nodes: list[Tensor]) -> Tensor:
    out = _scalar_node(
        sum(n.values[0, 0, 0] for n in nodes) / len(nodes), parents=tuple(nodes)
    )

    def _back():
        for n in nodes:
            n.add_grad(out.grad / len(nodes))

    out._backward = _back
    return out


@dataclass
class LossBreakdown:
    """Scalar loss terms of one registration forward pass.

    ``level_terms`` holds the auxiliary similarity terms for pyramid levels
    1 .. levels-1 in ascending level order (empty for a single level).  The
    ``node`` is the graph scalar whose backward drives training; ``total``
    always equals data + reg + sum(level_terms) exactly.
    """

    data: float
    reg: float
    level_terms: list[float]
    total: float
    node: Tensor = field(repr=False, compare=False, default=None)

    def term_items(self) -> list[tuple[str, float]]:
        items = [("data", self.data), ("reg", self.reg)]
        items += [(f"level_{i + 1}", v) for i, v in enumerate(self.level_terms)]
        items.append(("total", self.total))
        return items

    def as_dict(self) -> dict:
        return {
            "data": self.data,
            "reg": self.reg,
            "level_terms": list(self.level_terms),
            "total": self.total,
        }


def total_loss(result, target_pyramid: list[Tensor], cfg: LossConfig) -> LossBreakdown:
    """Full objective for one registered pair.

    ``result`` is a coarse-to-fine forward output; ``target_pyramid`` is the
    target image pyramid, finest first, matching the one the forward pass
    consumed.  Terms: data similarity at the finest level, the residual
    regularizer, and one similarity term per coarser level (unit weights).
    """
    data = ncc_ssd(result.warped_final, target_pyramid[0], cfg.eps, cfg.detach_stats)
    reg = reg_term(result.residual_0, cfg)
    level_nodes = [
        ncc_ssd(warped, target_pyramid[lvl], cfg.eps, cfg.detach_stats)
        for lvl, warped in result.level_warps
    ]
    node = sum_scalars([data, reg] + level_nodes)
    return LossBreakdown(
        data=float(data.values[0, 0, 0]),
        reg=float(reg.values[0, 0, 0]),
        level_terms=[float(n.values[0, 0, 0]) for n in level_nodes],
        total=float(node.values[0, 0, 0]),
        node=node,
    )


class Adam:
    """Adam with bias correction; one moment pair per parameter array."""

    def __init__(
        self,
        params: list[Param],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)
