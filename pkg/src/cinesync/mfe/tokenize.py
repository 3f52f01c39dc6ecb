"""Patch tokenizers for fMRI blocks and EEG blocks."""
from __future__ import annotations

import math

import numpy as np

from ..numcore import nn
from ..numcore.tensor import Tensor
from .config import EncoderConfigError


class FMRITokenizer(nn.Module):
    """Contiguous voxel chunks, each chunk's frame slab flattened and projected."""

    def __init__(self, V: int, frames: int, n_tokens: int, d: int, rng: np.random.Generator):
        super().__init__()
        self.V, self.frames, self.n_tokens = V, frames, n_tokens
        self.chunk = math.ceil(V / n_tokens)
        self.pad = self.chunk * n_tokens - V
        self.proj = nn.Linear(frames * self.chunk, d, rng)
        self.pos = nn.param(rng.normal(0.0, 0.02, (n_tokens, d)))

    def patches(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 3 or x.shape[1:] != (self.frames, self.V):
            raise EncoderConfigError(f"fMRI input must be (batch, {self.frames}, {self.V}), got {x.shape}")
        x = np.pad(x, ((0, 0), (0, 0), (0, self.pad)))
        b = len(x)
        return x.reshape(b, self.frames, self.n_tokens, self.chunk).transpose(0, 2, 1, 3).reshape(
            b, self.n_tokens, self.frames * self.chunk)

    def forward(self, x) -> Tensor:
        return self.proj(Tensor(self.patches(x))) + self.pos


class EEGTokenizer(nn.Module):
    """Consecutive time windows, each channels x window slab flattened and projected."""

    def __init__(self, channels: int, samples: int, n_tokens: int, d: int, rng: np.random.Generator):
        super().__init__()
        self.channels, self.samples, self.n_tokens = channels, samples, n_tokens
        self.window = math.ceil(samples / n_tokens)
        self.pad = self.window * n_tokens - samples
        self.proj = nn.Linear(channels * self.window, d, rng)
        self.pos = nn.param(rng.normal(0.0, 0.02, (n_tokens, d)))

    def patches(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 3 or x.shape[1:] != (self.channels, self.samples):
            raise EncoderConfigError(
                f"EEG input must be (batch, {self.channels}, {self.samples}), got {x.shape}")
        x = np.pad(x, ((0, 0), (0, 0), (0, self.pad)))
        b = len(x)
        return x.reshape(b, self.channels, self.n_tokens, self.window).transpose(0, 2, 1, 3).reshape(
            b, self.n_tokens, self.channels * self.window)

    def forward(self, x) -> Tensor:
        return self.proj(Tensor(self.patches(x))) + self.pos
