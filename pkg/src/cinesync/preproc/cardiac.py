"""R-peak detection and beat-locked template subtraction."""
from __future__ import annotations

import logging

import numpy as np
from scipy import signal
from scipy.ndimage import maximum_filter1d

from .runs import RawEEGRun

log = logging.getLogger(__name__)

MIN_BEATS = 10


def detect_r_peaks(ecg: np.ndarray, fs: float, refractory: float = 0.25,
                   window: float = 2.0) -> np.ndarray:
    """Sample indices of R peaks.

    5-15 Hz band-pass, squared first difference, threshold at half the
    rolling maximum over ``window`` seconds, one detection per refractory
    period; each detection is moved to the band-passed maximum within 60 ms.
    """
    ecg = np.asarray(ecg, dtype=np.float64).reshape(-1)
    sos = signal.butter(2, [5.0, 15.0], btype="bandpass", fs=fs, output="sos")
    bp = signal.sosfiltfilt(sos, ecg)
    energy = np.gradient(bp) ** 2
    thr = 0.5 * maximum_filter1d(energy, size=max(3, int(window * fs)), mode="nearest")
    cand, _ = signal.find_peaks(energy, height=thr, distance=max(1, int(refractory * fs)))
    half = max(1, int(0.06 * fs))
    peaks = []
    for c in cand:
        lo, hi = max(0, c - half), min(len(bp), c + half + 1)
        p = lo + int(np.argmax(bp[lo:hi]))
        if not peaks or p - peaks[-1] >= refractory * fs:
            peaks.append(p)
    return np.asarray(peaks, dtype=np.int64)


def qrs_artifact_removal(run: RawEEGRun, pre: float = 0.05, post: float = 0.6,
                         gate: float = 4.0) -> RawEEGRun:
    """Subtract the per-channel R-peak-locked average waveform at every beat.

    The template of each channel is shrunk by its estimation noise
    (``1 - noise/power``) and skipped entirely when its power is below
    ``gate`` times that noise, so channels without cardiac coupling pass
    through unchanged.
    """
    fs = run.fs
    peaks = detect_r_peaks(run.ecg, fs)
    a, b = int(round(pre * fs)), int(round(post * fs))
    n = run.data.shape[1]
    peaks_ok = peaks[(peaks - a >= 0) & (peaks + b <= n)]
    if len(peaks_ok) < MIN_BEATS:
        log.warning("only %d R peaks found; skipping QRS artifact removal", len(peaks_ok))
        return run.with_data(run.data, {"step": "qrs", "beats": int(len(peaks_ok)), "flag": "too_few_peaks"})
    idx = peaks_ok[:, None] + np.arange(-a, b)[None]                 # (beats, W)
    epochs = run.data[:, idx]                                         # (C, beats, W)
    template = epochs.mean(axis=1)                                    # (C, W)
    power = (template ** 2).mean(axis=1)
    noise = epochs.var(axis=1).mean(axis=1) / len(peaks_ok)
    shrink = np.where(power > gate * noise, 1.0 - noise / np.maximum(power, 1e-300), 0.0)
    out = run.data.copy()
    scaled = template * shrink[:, None]
    for row in idx:
        out[:, row] -= scaled
    note = {"step": "qrs", "beats": int(len(peaks_ok)),
            "channels_corrected": int((shrink > 0).sum()), "flag": ""}
    return run.with_data(out, note)
