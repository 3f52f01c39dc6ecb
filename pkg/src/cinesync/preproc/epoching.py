"""fMRI z-scoring with hemodynamic lag and TR-locked clip segmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .runs import EpochedSample, RawEEGRun, RawFMRIRun


class SynchronizationError(ValueError):
    pass


@dataclass
class ZScored:
    run: RawFMRIRun
    lag_frames: int
    flagged: np.ndarray     # indices of zero-variance voxels


def zscore_with_lag(run: RawFMRIRun, lag_seconds: float = 4.0, eps: float = 1e-8) -> ZScored:
    """Per-voxel z-score over the run.

    The lag is not applied to the data; it is returned as a frame count and
    used by :func:`epoch_align` to map clip k to the frames its response
    occupies.
    """
    x = np.asarray(run.data, dtype=np.float64)
    lag = int(round(lag_seconds * run.rate_hz))
    if x.shape[0] <= lag:
        raise ValueError(f"run of {x.shape[0]} frames is not longer than the {lag}-frame lag")
    # reduce each voxel over a contiguous row so its statistics do not depend on neighbours
    xt = np.ascontiguousarray(x.T)
    mu = xt.mean(axis=1)
    sd = xt.std(axis=1)
    flagged = np.flatnonzero(sd < eps)
    z = ((xt - mu[:, None]) / np.maximum(sd, eps)[:, None]).T.copy()
    z[:, flagged] = 0.0
    return ZScored(RawFMRIRun(z, run.tr_seconds), lag, flagged)


def clip_frame_range(k: int, trs_per_clip: int, lag_frames: int) -> tuple[int, int]:
    start = trs_per_clip * k + lag_frames
    return start, start + trs_per_clip


def n_clip_windows(n_frames: int, trs_per_clip: int) -> int:
    """Clips a run spans before any are dropped for the lag."""
    return n_frames // trs_per_clip


def epoch_align(fmri: RawFMRIRun, eeg: RawEEGRun, clip_seconds: float = 4.0, lag_frames: int = 5,
                episode_id: int = 0) -> tuple[list[EpochedSample], int]:
    """Cut paired clips; returns the clips and the number dropped at the run's end."""
    F = fmri.data.shape[0]
    if F == 0:
        return [], 0
    events = np.asarray(eeg.tr_events, dtype=np.int64)
    if abs(len(events) - F) > 1:
        raise SynchronizationError(f"{len(events)} TR events for {F} fMRI frames")
    per = int(round(clip_seconds / fmri.tr_seconds))
    samples = int(round(clip_seconds * eeg.fs))
    n_eeg = eeg.data.shape[1]
    out, dropped = [], 0
    for k in range(n_clip_windows(F, per)):
        lo, hi = clip_frame_range(k, per, lag_frames)
        if per * k >= len(events):
            dropped += 1
            continue
        a = int(events[per * k])
        if hi > F or a + samples > n_eeg:
            dropped += 1
            continue
        out.append(EpochedSample(fmri=fmri.data[lo:hi], eeg=eeg.data[:, a:a + samples],
                                 clip_index=k, episode_id=episode_id,
                                 stimulus_ref=f"episode_{episode_id:03d}/clip_{k:04d}"))
    return out, dropped
