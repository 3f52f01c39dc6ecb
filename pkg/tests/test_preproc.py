import numpy as np
import pytest

from cinesync.numcore.rng import stream
from cinesync.preproc import (FilterConfigError, RawEEGRun, RawFMRIRun, SynchronizationError,
                              bandpass_filter, clean_eeg, detect_r_peaks, epoch_align, fastica,
                              fastica_cleanup, n_clip_windows, notch_filter, preprocess_run,
                              qrs_artifact_removal, tone_amplitude, zscore_with_lag)
from cinesync.synthdata import DESK, draw_mixing, synthesize_episode
from cinesync.synthdata.generate import synth_ecg

FS = 1000.0
DB = lambda r: 20 * np.log10(r)


def sine(f, seconds=10.0, fs=FS):
    t = np.arange(int(seconds * fs)) / fs
    return np.sin(2 * np.pi * f * t)


def corr(a, b):
    a, b = a - a.mean(-1, keepdims=True), b - b.mean(-1, keepdims=True)
    return (a * b).sum(-1) / np.sqrt((a * a).sum(-1) * (b * b).sum(-1))


# filters

def test_bandpass_dc_rejected():
    y = bandpass_filter(np.ones(60_000), FS)
    mid = y[20_000:40_000]
    assert 10 * np.log10(np.mean(mid ** 2) / 1.0) < -40


def test_bandpass_passband_and_stopband():
    assert abs(DB(tone_amplitude(bandpass_filter(sine(10), FS), FS, 10))) < 1.0
    assert DB(tone_amplitude(bandpass_filter(sine(80), FS), FS, 80)) <= -30
    for f in (1, 5, 25):
        assert abs(DB(tone_amplitude(bandpass_filter(sine(f, 20), FS), FS, f))) < 1.0


def test_notch():
    assert tone_amplitude(notch_filter(sine(50), FS), FS, 50) <= 0.0316
    assert abs(DB(tone_amplitude(notch_filter(sine(10), FS), FS, 10))) < 1.0
    assert np.array_equal(notch_filter(np.zeros(1000), FS), np.zeros(1000))


def test_filter_config_errors():
    with pytest.raises(FilterConfigError):
        bandpass_filter(np.zeros(1000), fs=50.0)
    with pytest.raises(FilterConfigError):
        bandpass_filter(np.zeros(30), fs=FS)
    with pytest.raises(FilterConfigError):
        notch_filter(np.zeros(1000), fs=90.0)


def test_filters_zero_phase_and_stable():
    x = bandpass_filter(stream(0, "bl").normal(size=20_000), FS, 2.0, 20.0)
    for y in (bandpass_filter(x, FS), notch_filter(x, FS)):
        xc = np.correlate(y, x, mode="full")
        assert int(np.argmax(xc)) - (len(x) - 1) == 0
    big = 1e6 * stream(1, "big").normal(size=(2, 5000))
    assert np.isfinite(bandpass_filter(big, FS)).all()
    assert np.isfinite(notch_filter(big, FS)).all()


# cardiac

def test_r_peaks_60bpm():
    ecg, truth, _ = synth_ecg(60_000, FS, stream(0, "ecg"), mean_rr=1.0, jitter=0.0)
    peaks = detect_r_peaks(ecg, FS)
    assert abs(len(peaks) - len(truth)) <= 1


def _artifact_run(coupling=1.0, seed=0):
    r = stream(seed, "qrs")
    N, C = 120_000, 8
    ecg, _, bcg = synth_ecg(N, FS, r)
    neural = bandpass_filter(r.normal(size=(C, N)), FS, 1.0, 30.0)
    neural /= neural.std(axis=1, keepdims=True)
    artifact = coupling * r.uniform(0.5, 2.0, C)[:, None] * bcg[None]
    return neural, artifact, ecg


def test_qrs_removes_artifact():
    neural, artifact, ecg = _artifact_run()
    out = qrs_artifact_removal(RawEEGRun(neural + artifact, ecg, np.arange(0, 120_000, 800), FS))
    resid = out.data - neural
    assert (resid ** 2).sum() / (artifact ** 2).sum() <= 0.5
    assert corr(out.data, neural).min() >= 0.95
    assert out.log[-1]["flag"] == ""


def test_qrs_zero_coupling_is_near_identity():
    neural, _, ecg = _artifact_run(coupling=0.0)
    out = qrs_artifact_removal(RawEEGRun(neural, ecg, np.arange(0, 120_000, 800), FS))
    assert np.linalg.norm(out.data - neural) / np.linalg.norm(neural) < 0.01


def test_qrs_too_few_peaks_passes_through(caplog):
    x = stream(0, "flat").normal(size=(4, 5000))
    out = qrs_artifact_removal(RawEEGRun(x, np.zeros(5000), np.arange(0, 5000, 800), FS))
    assert np.array_equal(out.data, x)
    assert out.log[-1]["flag"] == "too_few_peaks"
    assert "R peaks" in caplog.text


# ICA

def _planted(n=20_000, C=64, seed=0):
    r = stream(seed, "planted")
    t = np.arange(n) / 250.0
    S = np.stack([np.sign(np.sin(2 * np.pi * 1.3 * t)),
                  ((t * 0.7) % 1.0) - 0.5,
                  r.laplace(size=n)])
    S = (S - S.mean(1, keepdims=True)) / S.std(1, keepdims=True)
    A = r.normal(size=(C, 3))
    return S, A


def test_fastica_recovers_planted_sources():
    S, A = _planted()
    res = fastica(A @ S, 3, seed=0)
    C = np.abs(corr(res.sources[:, None, :], S[None, :, :]))
    assert (C.max(axis=1) >= 0.95).all()
    assert sorted(C.argmax(axis=1).tolist()) == [0, 1, 2]


def test_fastica_cleanup_no_removal_reconstructs():
    S, A = _planted()
    X = A @ S
    ecg = stream(5, "unrelated").normal(size=X.shape[1])
    out, info = fastica_cleanup(X, ecg, n_components=3, corr_threshold=0.8)
    assert info["removed"] == []
    assert np.linalg.norm(out - X) / np.linalg.norm(X) < 1e-3


def test_fastica_cleanup_removes_planted_ecg_component():
    S, A = _planted()
    ecg = S[0] + 0.2 * stream(6, "e").normal(size=S.shape[1])
    out, info = fastica_cleanup(A @ S, ecg, n_components=3, corr_threshold=0.8)
    assert len(info["removed"]) == 1
    assert np.abs(corr(out, ecg[None])).max() < 0.1


def test_fastica_sample_precondition():
    with pytest.raises(ValueError):
        fastica(np.zeros((8, 50)), 8)


# fMRI z-score and epoching

def test_zscore_stats_and_lag():
    x = stream(0, "bold").normal(3.0, 2.0, size=(100, 40))
    x[:, 7] = 4.2
    z = zscore_with_lag(RawFMRIRun(x, 0.8))
    assert z.lag_frames == 5
    live = np.delete(z.run.data, 7, axis=1)
    assert np.abs(live.mean(0)).max() < 1e-6
    assert np.abs(live.std(0) - 1).max() < 1e-6
    assert z.flagged.tolist() == [7]
    assert np.array_equal(z.run.data[:, 7], np.zeros(100))


def test_zscore_requires_run_longer_than_lag():
    with pytest.raises(ValueError):
        zscore_with_lag(RawFMRIRun(np.ones((5, 3))))


def _grid(F, fs=1000.0, C=2, extra=0):
    ev = np.round(np.arange(F) * 0.8 * fs).astype(np.int64)
    N = int(round(F * 0.8 * fs)) + extra
    return RawEEGRun(np.arange(C * N, dtype=np.float64).reshape(C, N), np.zeros(N), ev, fs)


def test_fullscale_clip_count_and_eeg_slices():
    assert n_clip_windows(1350, 5) == 270
    F = 60
    fmri = RawFMRIRun(np.arange(F * 3, dtype=np.float64).reshape(F, 3))
    eeg = _grid(F)
    clips, dropped = epoch_align(fmri, eeg, lag_frames=5)
    assert len(clips) + dropped == 12 and dropped == 1
    for c in clips:
        k = c.clip_index
        assert c.eeg.shape == (2, 4000)
        assert np.array_equal(c.eeg, eeg.data[:, eeg.tr_events[5 * k]: eeg.tr_events[5 * k] + 4000])
        assert np.array_equal(c.fmri, fmri.data[5 * k + 5: 5 * k + 10])


def test_epoch_partition():
    F = 40
    fmri = RawFMRIRun(np.zeros((F, 2)))
    eeg = _grid(F, fs=100.0)
    clips, _ = epoch_align(fmri, eeg, lag_frames=5)
    used = np.concatenate([c.eeg[0] for c in clips])
    assert len(np.unique(used)) == len(used)
    fr = np.concatenate([np.arange(5 * c.clip_index + 5, 5 * c.clip_index + 10) for c in clips])
    assert len(np.unique(fr)) == len(fr)


def test_epoch_empty_and_mismatch():
    assert epoch_align(RawFMRIRun(np.zeros((0, 4))), _grid(0)) == ([], 0)
    eeg = _grid(20)
    with pytest.raises(SynchronizationError):
        epoch_align(RawFMRIRun(np.zeros((25, 4))), eeg)


def test_event_spacing_invariant():
    eeg = _grid(10)
    eeg.check_events()
    eeg.tr_events[3] += 5
    with pytest.raises(ValueError):
        eeg.check_events()


def test_channel_permutation_invariance():
    F = 30
    x = stream(2, "perm").normal(size=(F, 6))
    perm = stream(3, "p").permutation(6)
    eeg = _grid(F, fs=100.0)
    a, _ = epoch_align(zscore_with_lag(RawFMRIRun(x)).run, eeg)
    b, _ = epoch_align(zscore_with_lag(RawFMRIRun(x[:, perm])).run, eeg)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.fmri[:, perm], cb.fmri)


# end to end on generated runs

@pytest.fixture(scope="module")
def desk_run():
    mix = draw_mixing(DESK)
    return synthesize_episode(DESK, 0, mix)


def test_neural_signal_survives_chain(desk_run):
    run = desk_run
    out = clean_eeg(RawEEGRun(run.eeg, run.ecg, run.tr_events, DESK.eeg_fs))
    ref = bandpass_filter(run.neural, DESK.eeg_fs)
    assert corr(out.data, ref).mean() >= 0.9


def test_preprocess_run_shapes_and_log(desk_run):
    run = desk_run
    res = preprocess_run(RawFMRIRun(run.fmri, DESK.tr_seconds),
                         RawEEGRun(run.eeg, run.ecg, run.tr_events, DESK.eeg_fs))
    assert len(res.samples) == DESK.clips_per_episode
    assert res.log["dropped_clips"] == 1
    assert res.samples[0].fmri.shape == (5, DESK.V)
    assert res.samples[0].eeg.shape == (DESK.eeg_channels, DESK.eeg_samples)
    assert {"flagged_voxels", "ica_removed", "dropped_clips"} <= set(res.log)


def test_chain_is_deterministic(desk_run):
    run = desk_run
    mk = lambda: clean_eeg(RawEEGRun(run.eeg, run.ecg, run.tr_events, DESK.eeg_fs)).data
    assert np.array_equal(mk(), mk())
