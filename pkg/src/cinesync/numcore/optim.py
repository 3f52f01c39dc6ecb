"""AdamW with decoupled weight decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def like(cls, param: np.ndarray, **hyper) -> "AdamWState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **hyper)


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamWState) -> np.ndarray:
    """Apply one update in place to ``param`` and return it."""
    if param.shape != grad.shape:
        raise ValueError(f"grad shape {grad.shape} does not match param shape {param.shape}")
    if not np.isfinite(grad).all():
        raise NonFiniteError("adamw_step received a non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    if state.weight_decay:
        param *= 1.0 - state.lr * state.weight_decay
    param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)
    return param


@dataclass
class AdamW:
    """Optimizer over a list of parameter tensors.

    Weight decay is applied only to parameters of rank >= 2 (matrices);
    biases, norms and scalars are left undecayed.
    """

    params: list
    lr: float = 1e-4
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.01
    states: list = field(init=False)

    def __post_init__(self):
        self.states = [
            AdamWState.like(p.data, lr=self.lr, beta1=self.betas[0], beta2=self.betas[1],
                            eps=self.eps, weight_decay=self.weight_decay if p.ndim >= 2 else 0.0)
            for p in self.params
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, st in zip(self.params, self.states):
            if p.grad is None:
                continue
            adamw_step(p.data, p.grad.astype(p.dtype, copy=False), st)

    def set_lr(self, lr: float) -> None:
        self.lr = lr
        for st in self.states:
            st.lr = lr


def warmup_cosine(step: int, total: int, lr: float, warmup: int, min_frac: float = 0.1) -> float:
    """Linear warm-up over ``warmup`` steps, then cosine decay to ``min_frac * lr`` at ``total``."""
    if step < warmup:
        return lr * (step + 1) / warmup
    frac = min(1.0, (step - warmup) / max(1, total - warmup))
    return lr * (min_frac + (1 - min_frac) * 0.5 * (1 + math.cos(math.pi * frac)))


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                              for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total
