"""Fixed orthonormal patch codec standing in for a learned video autoencoder."""
from __future__ import annotations

import numpy as np

from ..numcore.rng import stream


class PatchCodec:
    """Split a (frames, H, W, C) clip into (pt, p, p) patches and rotate each by one orthonormal Q.

    Extents that are not multiples of the patch are zero-padded; ``decode``
    crops back to the original shape, so roundtrips are exact up to rounding.
    """

    def __init__(self, frames: int, size: int, channels: int = 3, patch: int = 4, patch_t: int = 2,
                 seed: int = 0):
        self.frames, self.size, self.channels = frames, size, channels
        self.patch, self.patch_t = patch, patch_t
        self.pad_t = -frames % patch_t
        self.pad_s = -size % patch
        self.grid = ((frames + self.pad_t) // patch_t, (size + self.pad_s) // patch, (size + self.pad_s) // patch)
        self.dim = patch_t * patch * patch * channels
        q, r = np.linalg.qr(stream(seed, "codec").normal(size=(self.dim, self.dim)))
        self.Q = q * np.sign(np.diag(r))       # unique orthonormal factor

    @property
    def tokens(self) -> int:
        return int(np.prod(self.grid))

    def encode(self, video: np.ndarray) -> np.ndarray:
        """(..., frames, H, W, C) -> (..., tokens, dim)."""
        v = np.asarray(video, dtype=np.float64)
        lead = v.shape[:-4]
        if v.shape[-4:] != (self.frames, self.size, self.size, self.channels):
            raise ValueError(f"codec expects (..., {self.frames}, {self.size}, {self.size}, {self.channels}), "
                             f"got {v.shape}")
        pads = [(0, 0)] * len(lead) + [(0, self.pad_t), (0, self.pad_s), (0, self.pad_s), (0, 0)]
        v = np.pad(v, pads)
        gt, gh, gw = self.grid
        pt, p = self.patch_t, self.patch
        v = v.reshape(*lead, gt, pt, gh, p, gw, p, self.channels)
        n = len(lead)
        v = v.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3, n + 5, n + 6)
        return v.reshape(*lead, self.tokens, self.dim) @ self.Q

    def decode(self, latent: np.ndarray) -> np.ndarray:
        z = np.asarray(latent, dtype=np.float64)
        lead = z.shape[:-2]
        if z.shape[-2:] != (self.tokens, self.dim):
            raise ValueError(f"codec latent must be (..., {self.tokens}, {self.dim}), got {z.shape}")
        gt, gh, gw = self.grid
        pt, p = self.patch_t, self.patch
        v = (z @ self.Q.T).reshape(*lead, gt, gh, gw, pt, p, p, self.channels)
        n = len(lead)
        v = v.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2, n + 5, n + 6)
        v = v.reshape(*lead, gt * pt, gh * p, gw * p, self.channels)
        return v[..., :self.frames, :self.size, :self.size, :]
