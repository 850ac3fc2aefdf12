"""Dense channel-major 2D tensors with reverse-mode automatic differentiation.

Every value flowing through the registration engine is a ``Tensor``: a
float64 array laid out ``(channels, height, width)``, row-major within each
channel, plus a lazily allocated gradient buffer of the same shape.  Ops in
the sibling modules build a DAG by recording parent links and a backward
hook on each result; ``backprop`` walks the graph once in reverse
topological order.  Backward hooks always accumulate (``+=``) so a node
feeding several consumers collects every contribution.

Trainable weights are ``Param`` objects, not tensors: arbitrary-shape
float64 arrays with an always-allocated gradient buffer that the optimizer
consumes and ``zero_grads`` resets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when an array does not satisfy an op's shape contract."""


@dataclass(frozen=True)
class Shape:
    """Integer (channels, height, width) triple, all strictly positive."""

    channels: int
    height: int
    width: int

    def __post_init__(self) -> None:
        for field in ("channels", "height", "width"):
            v = getattr(self, field)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ShapeError(f"{field} must be a positive integer, got {v!r}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


class Tensor:
    """A (C, H, W) float64 array with graph links for backprop.

    Leaves are built directly from arrays; interior nodes are produced by
    ops, which pass ``parents`` and a ``backward`` closure.  ``grad`` stays
    ``None`` until a backward pass (or ``ensure_grad``) touches the node.
    """

    __slots__ = ("values", "grad", "_parents", "_backward")

    def __init__(self, values, parents=(), backward=None):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"tensor values must be 3-d (C, H, W), got shape {v.shape}")
        if v.size == 0:
            raise ShapeError("tensor dimensions must be positive")
        self.values = v
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    # -- construction -----------------------------------------------------

    @classmethod
    def full(cls, shape: Shape, fill: float) -> "Tensor":
        fill = float(fill)
        if not np.isfinite(fill):
            raise ValueError(f"fill value must be finite, got {fill}")
        return cls(np.full(shape.as_tuple(), fill, dtype=np.float64))

    # -- metadata ----------------------------------------------------------

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> Shape:
        return Shape(*map(int, self.values.shape))

    def __repr__(self) -> str:
        c, h, w = self.values.shape
        return f"Tensor(channels={c}, height={h}, width={w})"

    # -- gradients ---------------------------------------------------------

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def add_grad(self, g) -> None:
        self.ensure_grad()
        self.grad += g


def make(shape: Shape, fill: float) -> Tensor:
    """Allocate a tensor of the given shape, every entry set to ``fill``."""
    return Tensor.full(shape, fill)


def mean_std(t: Tensor, channel: int) -> tuple[float, float]:
    """Population mean and standard deviation of one channel (1/N variance)."""
    if not 0 <= channel < t.channels:
        raise ShapeError(f"channel {channel} out of range for {t.channels} channels")
    plane = t.values[channel]
    m = float(plane.mean())
    return m, float(np.sqrt(np.mean((plane - m) ** 2)))


def backprop(root: Tensor) -> None:
    """Reverse-mode sweep from ``root``: seed its grad with ones, then run
    every ancestor's backward hook exactly once in reverse topological
    order, so a node's hook fires only after all its consumers' hooks.
    """
    topo: list[Tensor] = []
    seen: set[int] = set()
    # iterative post-order DFS; graphs get deep at high pyramid levels
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    root.ensure_grad()
    root.grad += 1.0
    for node in reversed(topo):
        # grad can stay None for ancestors recorded but never consumed
        if node._backward is not None and node.grad is not None:
            node._backward()


class Param:
    """A trainable array of any shape with a persistent gradient buffer."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param(shape={self.value.shape})"


def zero_grads(params) -> None:
    for p in params:
        p.grad.fill(0.0)


# -- elementary graph ops used across modules ------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"add shape mismatch: {a.values.shape} vs {b.values.shape}")
    out = Tensor(a.values + b.values, parents=(a, b))

    def _back():
        a.add_grad(out.grad)
        b.add_grad(out.grad)

    out._backward = _back
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape[1:] != b.values.shape[1:]:
        raise ShapeError(
            f"concat spatial mismatch: {a.values.shape[1:]} vs {b.values.shape[1:]}"
        )
    out = Tensor(np.concatenate([a.values, b.values], axis=0), parents=(a, b))
    ca = a.channels

    def _back():
        a.add_grad(out.grad[:ca])
        b.add_grad(out.grad[ca:])

    out._backward = _back
    return out
