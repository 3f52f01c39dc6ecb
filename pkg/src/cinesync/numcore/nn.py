"""Layer building blocks on top of :mod:`cinesync.numcore.tensor`."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Container that registers tensor parameters and child modules by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
            self._children.pop(name, None)
        elif isinstance(value, Module):
            self._children[name] = value
            self._params.pop(name, None)
        elif value is None:
            self._children.pop(name, None)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self, trainable_only: bool = True) -> list[Tensor]:
        return [p for _, p in self.named_parameters() if p.requires_grad or not trainable_only]

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def freeze(self) -> "Module":
        for _, p in self.named_parameters():
            p.requires_grad = False
        return self

    def unfreeze(self) -> "Module":
        for _, p in self.named_parameters():
            p.requires_grad = True
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def param(data, dtype=None) -> Tensor:
    """Trainable leaf; defaults to the engine's float32 whatever the input dtype."""
    return Tensor(data, requires_grad=True, dtype=dtype or T.DEFAULT_DTYPE)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as (d_in, d_out).

    ``adapter`` may hold a module whose output is added to the result; the
    low-rank adapters of the decoder plug in here.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None, dtype=None):
        super().__init__()
        std = math.sqrt(1.0 / d_in) if std is None else std
        dtype = dtype or T.DEFAULT_DTYPE
        self.d_in, self.d_out = d_in, d_out
        self.weight = param(rng.normal(0.0, std, (d_in, d_out)), dtype)
        self.bias = param(np.zeros(d_out), dtype) if bias else None
        self.adapter = None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        if self.adapter is not None:
            y = y + self.adapter(x)
        return y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype=None):
        super().__init__()
        dtype = dtype or T.DEFAULT_DTYPE
        self.gain = param(np.ones(d), dtype)
        self.bias = param(np.zeros(d), dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype=None):
        super().__init__()
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.q = Linear(d, d, rng, dtype=dtype)
        self.k = Linear(d, d, rng, dtype=dtype)
        self.v = Linear(d, d, rng, dtype=dtype)
        self.o = Linear(d, d, rng, std=0.02, dtype=dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        context = x if context is None else context
        b, n, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // self.heads))
        attn = T.softmax(scores, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.o(out)


class MLP(Module):
    def __init__(self, d_in: int, hidden: int, d_out: int, rng: np.random.Generator, dtype=None):
        super().__init__()
        self.fc1 = Linear(d_in, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, d_out, rng, std=0.02, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def __init__(self, d: int, heads: int, mlp_hidden: int, rng: np.random.Generator,
                 cross: bool = False, dtype=None):
        super().__init__()
        self.ln1 = LayerNorm(d, dtype=dtype)
        self.attn = MultiHeadAttention(d, heads, rng, dtype=dtype)
        self.cross = cross
        if cross:
            self.ln_x = LayerNorm(d, dtype=dtype)
            self.ln_ctx = LayerNorm(d, dtype=dtype)
            self.xattn = MultiHeadAttention(d, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype=dtype)
        self.mlp = MLP(d, mlp_hidden, d, rng, dtype=dtype)

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x))
        if self.cross:
            x = x + self.xattn(self.ln_x(x), self.ln_ctx(context))
        return x + self.mlp(self.ln2(x))


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Standard sin/cos features of integer positions or timesteps, shape (len(t), dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb
