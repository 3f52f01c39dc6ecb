"""DDPM ancestral and DDIM samplers over a respaced step grid, and clip reconstruction."""
from __future__ import annotations

import numpy as np

from ..numcore import tensor as T
from ..numcore.rng import stream
from ..numcore.tensor import NonFiniteError
from .schedule import ScheduleError

LATENT_LIMIT = 1e3


def step_grid(steps: int, T_: int) -> np.ndarray:
    """``steps`` distinct timesteps from T down to 1 (evenly spaced)."""
    if not 1 <= steps <= T_:
        raise ScheduleError(f"sampling steps must lie in 1..{T_}, got {steps}")
    if steps == 1:
        return np.array([T_])
    return np.round(np.linspace(T_, 1, steps)).astype(np.int64)


def sample_latents(model, z_b: np.ndarray, steps: int = 50, sampler: str = "ddim", seed: int = 0,
                   clip_ids=None, batch: int = 64) -> tuple[np.ndarray, int]:
    """Denoise seeded Gaussian latents conditioned on z_b; returns (latents, denoiser calls per clip).

    Noise for clip i comes from its own stream keyed by ``clip_ids[i]``, so a
    clip's sample does not depend on which other clips share its batch.
    """
    if sampler not in ("ddim", "ddpm"):
        raise ValueError(f"unknown sampler {sampler!r}; expected 'ddim' or 'ddpm'")
    sched = model.schedule
    grid = step_grid(steps, sched.T)
    z_b = np.asarray(z_b, np.float32)
    n = len(z_b)
    clip_ids = np.arange(n) if clip_ids is None else np.asarray(clip_ids)
    shape = (model.cfg.latent_tokens, model.cfg.latent_dim)
    out = np.empty((n, *shape), np.float32)
    calls = 0
    for s0 in range(0, n, batch):
        ids = clip_ids[s0:s0 + batch]
        rngs = [stream(seed, "sample", int(c)) for c in ids]
        x = np.stack([r.standard_normal(shape, dtype=np.float32) for r in rngs])
        calls = 0
        for i, t in enumerate(grid):
            with T.no_grad():
                eps, x0 = model.predict(x, z_b[s0:s0 + batch], np.full(len(x), t))
            calls += 1
            eps, x0 = eps.data, x0.data
            ab = sched.alpha_bar[t - 1]
            ab_prev = sched.alpha_bar[grid[i + 1] - 1] if i + 1 < len(grid) else 1.0
            if sampler == "ddim":
                x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
            else:
                beta = 1.0 - ab / ab_prev
                mean = (np.sqrt(ab_prev) * beta / (1.0 - ab)) * x0 + \
                       (np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)) * x
                x = mean
                if i + 1 < len(grid):
                    var = beta * (1.0 - ab_prev) / (1.0 - ab)
                    x = x + np.sqrt(var) * np.stack([r.standard_normal(shape, dtype=np.float32) for r in rngs])
            x = x.astype(np.float32)
            if not np.isfinite(x).all() or np.abs(x).max() > LATENT_LIMIT:
                raise NonFiniteError(f"sampling diverged at t={t}: latent magnitude {np.abs(x).max():.3g}")
        out[s0:s0 + batch] = x
    return out, calls


def reconstruct(encoder_bundle, decoder_bundle, fmri: np.ndarray, eeg: np.ndarray, steps: int = 50,
                sampler: str = "ddim", seed: int = 0, clip_ids=None, z_b: np.ndarray | None = None
                ) -> np.ndarray:
    """Brain recordings -> z_b (frozen encoder) -> sampled latents -> videos in [0, 1]."""
    if z_b is None:
        z_b = fused_condition(encoder_bundle, fmri, eeg)
    lat, _ = sample_latents(decoder_bundle.model, z_b, steps, sampler, seed, clip_ids)
    return decoder_bundle.to_video(lat)


def fused_condition(encoder_bundle, fmri: np.ndarray, eeg: np.ndarray, batch: int = 128) -> np.ndarray:
    enc = encoder_bundle.encoder
    parts = []
    with T.no_grad():
        for s in range(0, len(fmri), batch):
            parts.append(enc.fuse(enc.encode(fmri[s:s + batch], eeg[s:s + batch])).data)
    return np.concatenate(parts).astype(np.float32)
