"""Low-rank adapters for frozen linear layers."""
from __future__ import annotations

import numpy as np

from ..numcore import nn
from ..numcore.tensor import Tensor


class LoRAConfigError(ValueError):
    pass


class LoRAAdapter(nn.Module):
    """Delta(x) = (alpha / r) * B (A x), with A ~ N(0, 0.02^2) of shape (r, d_in) and B = 0 (d_out, r)."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float, rng: np.random.Generator,
                 dtype=None):
        super().__init__()
        if not 1 <= rank <= min(d_in, d_out):
            raise LoRAConfigError(f"LoRA rank {rank} must lie in 1..min({d_in}, {d_out})")
        self.rank, self.alpha = rank, float(alpha)
        self.A = nn.param(rng.normal(0.0, 0.02, (rank, d_in)), dtype)
        self.B = nn.param(np.zeros((d_out, rank)), dtype)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta_weight(self) -> np.ndarray:
        """Update in the (d_in, d_out) layout used by :class:`nn.Linear`."""
        return self.scale * (self.A.data.T @ self.B.data.T)

    def forward(self, x: Tensor) -> Tensor:
        return ((x @ self.A.T) @ self.B.T) * self.scale


def lora_apply(linear: nn.Linear, adapter: LoRAAdapter, x) -> Tensor:
    """Base projection plus the adapter path, leaving ``linear`` untouched."""
    y = x @ linear.weight
    if linear.bias is not None:
        y = y + linear.bias
    return y + adapter(x)


def attach(linear: nn.Linear, rank: int, alpha: float, rng: np.random.Generator) -> LoRAAdapter:
    if linear.d_in < rank or linear.d_out < rank:
        raise LoRAConfigError(f"LoRA rank {rank} exceeds layer shape {linear.d_in}x{linear.d_out}")
    linear.adapter = LoRAAdapter(linear.d_in, linear.d_out, rank, alpha, rng, dtype=linear.weight.dtype)
    return linear.adapter


def adapted_linears(module: nn.Module) -> list[nn.Linear]:
    """Every attention and feed-forward projection inside ``module``'s transformer blocks."""
    found = []

    def walk(m):
        if isinstance(m, (nn.MultiHeadAttention, nn.MLP)):
            found.extend(c for c in m._children.values() if isinstance(c, nn.Linear))
            return
        for c in m._children.values():
            walk(c)

    walk(module)
    return found


def merged_weight(linear: nn.Linear) -> np.ndarray:
    w = linear.weight.data
    if linear.adapter is None:
        return w.copy()
    return (w + linear.adapter.delta_weight()).astype(w.dtype)


def merge_lora(module: nn.Module) -> None:
    """Fold every adapter into its base weight and detach it."""
    for lin in adapted_linears(module):
        if lin.adapter is not None:
            lin.weight.data[...] = merged_weight(lin)
            lin.adapter = None
