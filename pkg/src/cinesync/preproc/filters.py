"""Zero-phase EEG filters."""
from __future__ import annotations

import numpy as np
from scipy import signal


class FilterConfigError(ValueError):
    pass


def bandpass_filter(x: np.ndarray, fs: float, low: float = 0.1, high: float = 30.0,
                    order: int = 6) -> np.ndarray:
    """Butterworth band-pass applied forward and backward along the last axis.

    Order 6 keeps the two-pass gain within 1 dB up to 25 Hz; at order 4 the
    25 Hz loss is about 1.8 dB.
    """
    if fs <= 2 * high:
        raise FilterConfigError(f"sampling rate {fs} Hz must exceed twice the upper cutoff {high} Hz")
    if not 0 < low < high:
        raise FilterConfigError(f"need 0 < low < high, got low={low}, high={high}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] <= 10 * order:
        raise FilterConfigError(f"series of length {x.shape[-1]} too short for order {order}")
    sos = signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, x, axis=-1)


def notch_filter(x: np.ndarray, fs: float, f0: float = 50.0, q: float = 30.0) -> np.ndarray:
    """Second-order IIR notch at ``f0`` applied forward and backward."""
    if fs <= 2 * f0:
        raise FilterConfigError(f"sampling rate {fs} Hz must exceed twice the notch frequency {f0} Hz")
    b, a = signal.iirnotch(f0, q, fs=fs)
    return signal.filtfilt(b, a, np.asarray(x, dtype=np.float64), axis=-1)


def tone_amplitude(x: np.ndarray, fs: float, freq: float) -> float:
    """Amplitude of the ``freq`` component of a 1-D series (Hann-windowed FFT)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.hanning(len(x))
    spec = np.fft.rfft(x * w)
    freqs = np.fft.rfftfreq(len(x), 1.0 / fs)
    k = int(np.argmin(np.abs(freqs - freq)))
    return float(2.0 * np.abs(spec[k]) / w.sum())
