"""Synthetic paired stimulus / fMRI / EEG runs with planted complementary structure.

Each clip carries two independent latent factors. The spatial factor sets
the colours in the rendered frames and drives the fMRI voxels; the temporal
factor sets block trajectories and modulates a bank of EEG oscillations.
Neither brain signal carries the other factor, so only a model that combines
both recordings can explain the full stimulus.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..numcore.rng import stream
from .config import SynthConfig

log = logging.getLogger(__name__)

EEG_VOLTS = 1e-5
FMRI_BASELINE = 100.0
HRF_TAPS = 5


def hrf_kernel(taps: int = HRF_TAPS) -> np.ndarray:
    """Truncated gamma(2, 1) shape; applied after the fixed lag."""
    x = np.arange(1, taps + 1, dtype=np.float64)
    h = x * np.exp(-x)
    return h / h.sum()


def draw_mixing(cfg: SynthConfig) -> dict[str, np.ndarray]:
    """Dataset-wide mixing matrices and rendering weights."""
    r = stream(cfg.seed, "mixing")
    fs = cfg.eeg_fs
    top = min(24.0, 0.4 * fs)
    return {
        "A_f": r.normal(0.0, 1.0 / np.sqrt(cfg.d_s), (cfg.V, cfg.d_s)),
        "B_e": r.normal(0.0, np.sqrt(2.0 / cfg.d_t), (cfg.eeg_channels, cfg.d_t)),
        "eeg_freqs": np.linspace(4.3, top - 0.3, cfg.d_t),
        "eeg_phases": r.uniform(0.0, 2 * np.pi, cfg.d_t),
        "bg_freqs": r.integers(0, 3, (cfg.d_s, 2)).astype(np.float64),
        "bg_phases": r.uniform(0.0, 2 * np.pi, (cfg.d_s, 2)),
        "bg_channels": r.normal(0.0, 1.0, (cfg.d_s, 3)),
        "start_weights": r.normal(0.0, 1.0 / np.sqrt(cfg.d_t), (2, 2, cfg.d_t)),
        "velocity_weights": r.normal(0.0, 1.0 / np.sqrt(cfg.d_t), (2, 2, cfg.d_t)),
        "ecg_channel_weights": r.normal(0.0, 1.0, cfg.eeg_channels),
        "powerline_gain": r.uniform(0.5, 1.5, cfg.eeg_channels),
        "powerline_phase": r.uniform(0.0, 2 * np.pi, cfg.eeg_channels),
        "hrf": hrf_kernel(),
    }


def class_from_latents(spatial: np.ndarray, temporal: np.ndarray, n_classes: int) -> np.ndarray:
    """Sign pattern of the leading latent dimensions, read as a binary number."""
    bits = int(np.log2(n_classes))
    ks = (bits + 1) // 2
    kt = bits - ks
    signs = np.concatenate([spatial[:, :ks] > 0, temporal[:, :kt] > 0], axis=1).astype(np.int64)
    return (signs * (1 << np.arange(bits))).sum(axis=1)


def caption(class_id: int) -> str:
    return f"a video clip of category {int(class_id)}"


def draw_latents(cfg: SynthConfig, episode: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = stream(cfg.seed, "latent", episode)
    s = r.normal(size=(cfg.clips_per_episode, cfg.d_s))
    t = r.normal(size=(cfg.clips_per_episode, cfg.d_t))
    return s, t, class_from_latents(s, t, cfg.n_classes)


BLOCK_COLORS = np.array([[0.05, 0.1, 0.9], [0.95, 0.9, 0.1]])
BLOCK_HOMES = np.array([[0.3, 0.35], [0.7, 0.65]])


def background_patterns(mix: dict, size: int) -> np.ndarray:
    """One smooth colour pattern per spatial dimension, shape (d_s, H, W, 3), unit RMS."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    fx, fy = mix["bg_freqs"][:, 0, None, None], mix["bg_freqs"][:, 1, None, None]
    px, py = mix["bg_phases"][:, 0, None, None], mix["bg_phases"][:, 1, None, None]
    wave = np.cos(np.pi * fx * xx + px) * np.cos(np.pi * fy * yy + py)
    P = wave[..., None] * mix["bg_channels"][:, None, None, :]
    return P / np.sqrt((P ** 2).mean(axis=(1, 2, 3), keepdims=True))


def render_clips(spatial: np.ndarray, temporal: np.ndarray, mix: dict, cfg: SynthConfig) -> np.ndarray:
    """Frames in [0, 1], shape (n, frames, H, W, 3).

    The static background is a squashed linear combination of fixed smooth
    patterns weighted by the spatial factor. Two soft-edged blocks of fixed
    colour drift along straight paths whose start and velocity are linear in
    the temporal factor. Both effects are close to linear in the latents,
    which keeps them recoverable from coarse frame statistics.
    """
    n, nf, size = spatial.shape[0], cfg.frames_per_clip, cfg.frame_size
    sig = special.expit
    P = background_patterns(mix, size)
    bg = 0.5 + 0.25 * np.tanh(np.einsum("nj,jhwc->nhwc", spatial, P) / np.sqrt(cfg.d_s))
    frames = np.broadcast_to(bg[:, None], (n, nf, size, size, 3)).copy()
    tau = np.linspace(-0.5, 0.5, nf) if nf > 1 else np.zeros(1)
    coords = np.arange(size) + 0.5
    half, soft, disp = 0.16 * size, 0.05 * size, 0.06 * size
    for b in range(2):
        start = temporal @ mix["start_weights"][b].T               # (n, 2)
        vel = temporal @ mix["velocity_weights"][b].T
        centre = BLOCK_HOMES[b] * size + disp * (start[:, None, :] + 1.5 * vel[:, None, :] * tau[None, :, None])
        cx, cy = centre[..., 0], centre[..., 1]                    # (n, nf)
        mx = sig((half - np.abs(coords[None, None, :] - cx[..., None])) / soft)  # (n, nf, W)
        my = sig((half - np.abs(coords[None, None, :] - cy[..., None])) / soft)  # (n, nf, H)
        m = (my[..., :, None] * mx[..., None, :])[..., None]
        frames = frames * (1.0 - m) + BLOCK_COLORS[b] * m
    return np.clip(frames, 0.0, 1.0)


def ecg_waveform(t: np.ndarray) -> np.ndarray:
    """Single beat (Q, R, S, T waves), time in seconds relative to the R peak."""
    g = lambda mu, sd, a: a * np.exp(-0.5 * ((t - mu) / sd) ** 2)
    return g(-0.03, 0.01, -0.15) + g(0.0, 0.012, 1.0) + g(0.03, 0.01, -0.25) + g(0.25, 0.05, 0.3)


def bcg_waveform(t: np.ndarray) -> np.ndarray:
    """Beat-locked EEG artifact shape, time in seconds relative to the R peak."""
    u = t - 0.1
    return np.where(u >= 0, np.exp(-u / 0.12) * np.sin(2 * np.pi * 4.0 * u), 0.0) * (u < 0.45)


def beat_times(duration: float, r: np.random.Generator, mean_rr: float = 0.85, jitter: float = 0.05,
               start: float = 0.3) -> np.ndarray:
    times, t = [], start
    while t < duration:
        times.append(t)
        t += float(np.clip(mean_rr + jitter * r.normal(), 0.6, 1.2))
    return np.asarray(times)


def synth_ecg(n_samples: int, fs: float, r: np.random.Generator, mean_rr: float = 0.85,
              jitter: float = 0.05, noise: float = 0.02):
    """ECG trace, R-peak sample indices and the beat-locked artifact shape (both 1-D)."""
    beats = beat_times(n_samples / fs, r, mean_rr, jitter)
    tt = np.arange(n_samples) / fs
    ecg = np.zeros(n_samples)
    bcg = np.zeros(n_samples)
    for b in beats:
        lo, hi = max(0, int((b - 0.2) * fs)), min(n_samples, int((b + 0.7) * fs) + 1)
        ecg[lo:hi] += ecg_waveform(tt[lo:hi] - b)
        bcg[lo:hi] += bcg_waveform(tt[lo:hi] - b)
    ecg += noise * r.normal(size=n_samples)
    peaks = np.round(beats * fs).astype(np.int64)
    return ecg, peaks[peaks < n_samples], bcg


@dataclass
class EpisodeRun:
    """Everything generated for one episode, including ground-truth components."""

    episode: int
    fmri: np.ndarray            # (F, V)
    eeg: np.ndarray             # (channels, N), volts
    ecg: np.ndarray             # (N,)
    tr_events: np.ndarray       # (F,) sample indices
    videos: np.ndarray          # (clips, frames, H, W, 3)
    spatial: np.ndarray
    temporal: np.ndarray
    class_ids: np.ndarray
    neural: np.ndarray          # (channels, N), volts, clean planted signal
    artifact: np.ndarray        # (channels, N), volts, beat-locked component
    r_peaks: np.ndarray
    fmri_clean: np.ndarray      # (F, V) noiseless response without baseline
    extras: dict = field(default_factory=dict)


def eeg_basis(cfg: SynthConfig, mix: dict) -> np.ndarray:
    tt = np.arange(cfg.eeg_samples) / cfg.eeg_fs
    return np.sin(2 * np.pi * mix["eeg_freqs"][:, None] * tt[None] + mix["eeg_phases"][:, None])


def synthesize_episode(cfg: SynthConfig, episode: int, mix: dict | None = None) -> EpisodeRun:
    mix = draw_mixing(cfg) if mix is None else mix
    s, t, cls = draw_latents(cfg, episode)
    n = cfg.clips_per_episode
    per, lag = cfg.trs_per_clip, cfg.lag_frames
    F = per * n + lag
    fs = cfg.eeg_fs
    N = int(round(F * cfg.tr_seconds * fs))
    r = stream(cfg.seed, "noise", episode)

    # fMRI: lagged gamma response to the per-TR drive A_f s.
    drive = np.zeros((F, cfg.V))
    drive[: per * n] = np.repeat(s @ mix["A_f"].T, per, axis=0)
    h = mix["hrf"]
    clean = np.zeros((F, cfg.V))
    for j, hj in enumerate(h):
        shift = lag + j
        if shift < F:
            clean[shift:] += hj * drive[: F - shift]
    sig_var = clean.var(axis=0)
    noise_sd = np.sqrt(sig_var / 10 ** (cfg.snr_db / 10.0))
    baseline = FMRI_BASELINE + 10.0 * r.normal(size=cfg.V)
    fmri = baseline + clean + noise_sd * r.normal(size=(F, cfg.V))

    # EEG: oscillation bank scaled by the temporal factor, mixed to channels.
    basis = eeg_basis(cfg, mix)                                  # (d_t, T)
    neural = np.zeros((cfg.eeg_channels, N))
    T = cfg.eeg_samples
    tr_events = np.round(np.arange(F) * cfg.tr_seconds * fs).astype(np.int64)
    for k in range(n):
        a = tr_events[per * k]
        neural[:, a:a + T] = mix["B_e"] @ (t[k][:, None] * basis)
    neural_var = neural[:, : n * T].var(axis=1)
    noise = np.sqrt(neural_var / 10 ** (cfg.snr_db / 10.0))[:, None] * r.normal(size=neural.shape)
    ecg, peaks, bcg = synth_ecg(N, fs, r)
    artifact = cfg.ecg_coupling * mix["ecg_channel_weights"][:, None] * bcg[None]
    tt = np.arange(N) / fs
    powerline = cfg.powerline_amp * mix["powerline_gain"][:, None] * np.sin(
        2 * np.pi * 50.0 * tt[None] + mix["powerline_phase"][:, None]) if fs > 100.0 else 0.0
    eeg = neural + noise + artifact + powerline

    videos = render_clips(s, t, mix, cfg)
    return EpisodeRun(
        episode=episode, fmri=fmri, eeg=eeg * EEG_VOLTS, ecg=ecg, tr_events=tr_events, videos=videos,
        spatial=s, temporal=t, class_ids=cls, neural=neural * EEG_VOLTS, artifact=artifact * EEG_VOLTS,
        r_peaks=peaks, fmri_clean=clean,
    )
