"""Frozen stand-ins for the pretrained visual and text encoders."""
from __future__ import annotations

import numpy as np

from ..numcore.rng import stream
from ..numcore.tensor import Tensor


def pooled_frames(frames: np.ndarray, pool: int = 4) -> np.ndarray:
    """Average-pool (..., H, W, 3) frames to (..., H/pool * W/pool * 3) features centred at 0."""
    f = np.asarray(frames, dtype=np.float64)
    *lead, H, W, C = f.shape
    f = f.reshape(*lead, H // pool, pool, W // pool, pool, C).mean(axis=(-4, -2))
    return f.reshape(*lead, -1) - 0.5


class StubVideoEncoder:
    """Per-frame embedding: pooled pixels through a fixed random projection, unit-normalized."""

    def __init__(self, frame_size: int, embed_dim: int, pool: int = 4, seed: int = 0):
        self.pool = pool
        n_in = (frame_size // pool) ** 2 * 3
        w = stream(seed, "stub", "video").normal(0.0, 1.0 / np.sqrt(n_in), (n_in, embed_dim))
        self.projection = Tensor(w, requires_grad=False)

    def parameters(self):
        return [self.projection]

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        e = pooled_frames(frames, self.pool) @ self.projection.data
        return (e / np.maximum(np.linalg.norm(e, axis=-1, keepdims=True), 1e-12)).astype(np.float32)


class StubTextEncoder:
    """Fixed random unit vector per class (the templated caption carries only the class)."""

    def __init__(self, n_classes: int, embed_dim: int, seed: int = 0):
        w = stream(seed, "stub", "text").normal(size=(n_classes, embed_dim))
        self.projection = Tensor(w / np.linalg.norm(w, axis=1, keepdims=True), requires_grad=False)

    def parameters(self):
        return [self.projection]

    def __call__(self, class_ids) -> np.ndarray:
        return self.projection.data[np.asarray(class_ids)].astype(np.float32)


def structure_embedder(frames: np.ndarray) -> np.ndarray:
    """Parameter-free frame descriptor (pooled, mean-removed pixels) for consistency scores."""
    f = pooled_frames(frames, 4)
    return f - f.mean(axis=-1, keepdims=True)
