"""Linear-beta DDPM noise schedule, the forward process and timestep sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Timesteps are 1-based: ``alpha_bar[t - 1]`` belongs to step t."""

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            raise ScheduleError(f"timesteps must be integers, got {t.dtype}")
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ScheduleError(f"timestep out of range 1..{self.T}: {t.min()}..{t.max()}")
        return t

    def ab(self, t) -> np.ndarray:
        return self.alpha_bar[self.check_t(t) - 1]


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ScheduleError(f"schedule needs T >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    return NoiseSchedule(T, beta, np.cumprod(1.0 - beta))


def diffusion_coefficients(alpha_bar, dtype) -> tuple[np.ndarray, np.ndarray]:
    """sqrt(alpha_bar) and sqrt(1 - alpha_bar), computed in float64 then cast to ``dtype``."""
    ab = np.asarray(alpha_bar, dtype=np.float64)
    return np.sqrt(ab).astype(dtype), np.sqrt(1.0 - ab).astype(dtype)


def forward_diffuse(x0: np.ndarray, t, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """x_t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps for a scalar t or one t per batch row."""
    x0 = np.asarray(x0)
    noise = np.asarray(noise, dtype=x0.dtype)
    if noise.shape != x0.shape:
        raise ScheduleError(f"noise shape {noise.shape} != x0 shape {x0.shape}")
    t = schedule.check_t(t)
    a, s = diffusion_coefficients(schedule.ab(t), x0.dtype)
    if t.ndim:
        a = a.reshape(-1, *([1] * (x0.ndim - 1)))
        s = s.reshape(-1, *([1] * (x0.ndim - 1)))
    return a * x0 + s * noise


def sample_timesteps(batch: int, T: int, rng: np.random.Generator, stratified: bool = True) -> np.ndarray:
    """One t per row in 1..T; stratified draws one t from each of ``batch`` equal-width bins."""
    if not stratified:
        return rng.integers(1, T + 1, size=batch)
    edges = np.linspace(0.0, T, batch + 1)
    t = np.floor(edges[:-1] + rng.random(batch) * np.diff(edges)).astype(np.int64) + 1
    return rng.permutation(np.clip(t, 1, T))
