"""Preprocessing for simultaneous EEG and fMRI runs."""
from .cardiac import detect_r_peaks, qrs_artifact_removal
from .epoching import SynchronizationError, epoch_align, n_clip_windows, zscore_with_lag
from .filters import FilterConfigError, bandpass_filter, notch_filter, tone_amplitude
from .ica import ICAResult, fastica, fastica_cleanup
from .pipeline import PreprocConfig, clean_eeg, preprocess_dataset, preprocess_run
from .runs import EpochedSample, RawEEGRun, RawFMRIRun

__all__ = [
    "detect_r_peaks", "qrs_artifact_removal", "SynchronizationError", "epoch_align", "n_clip_windows",
    "zscore_with_lag", "FilterConfigError", "bandpass_filter", "notch_filter", "tone_amplitude",
    "ICAResult", "fastica", "fastica_cleanup", "PreprocConfig", "clean_eeg", "preprocess_dataset",
    "preprocess_run", "EpochedSample", "RawEEGRun", "RawFMRIRun",
]
