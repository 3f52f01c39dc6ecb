from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RawEEGRun:
    data: np.ndarray            # (channels, N)
    ecg: np.ndarray             # (N,)
    tr_events: np.ndarray       # sample index of each fMRI TR onset
    fs: float = 1000.0
    log: list = field(default_factory=list)

    def with_data(self, data: np.ndarray, note: dict | None = None) -> "RawEEGRun":
        return RawEEGRun(data, self.ecg, self.tr_events, self.fs,
                         self.log + ([note] if note else []))

    def check_events(self, tr_seconds: float = 0.8) -> None:
        ev = np.asarray(self.tr_events)
        if len(ev) > 1:
            d = np.diff(ev)
            if (d <= 0).any():
                raise ValueError("tr_events must be strictly increasing")
            step = tr_seconds * self.fs
            if np.abs(d - step).max() > 1.0:
                raise ValueError(f"tr_events spacing deviates from {step} samples by more than 1")


@dataclass
class RawFMRIRun:
    data: np.ndarray            # (F, V)
    tr_seconds: float = 0.8

    @property
    def rate_hz(self) -> float:
        return 1.0 / self.tr_seconds


@dataclass
class EpochedSample:
    fmri: np.ndarray            # (trs_per_clip, V)
    eeg: np.ndarray             # (channels, samples_per_clip)
    clip_index: int
    episode_id: int = 0
    stimulus_ref: str = ""
