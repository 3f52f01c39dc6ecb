import struct

import numpy as np
import pytest

from cinesync.numcore.rng import stream
from cinesync.preproc import RawEEGRun, clean_eeg, preprocess_dataset
from cinesync.synthdata import (DESK, FULLSCALE, PRESETS, FormatError, ManifestError, SynthConfig,
                                decode, draw_mixing, encode, generate_dataset, load_clips,
                                load_manifest, read_tensor_file, split_train_test,
                                synthesize_episode, verify_manifest, write_tensor_file)
from cinesync.synthdata.generate import class_from_latents

TINY = SynthConfig(n_episodes=3, clips_per_episode=4, V=32, eeg_channels=8, eeg_samples=512,
                   frames_per_clip=4, frame_size=16, train_episodes=2, test_episodes=1)


# CBTF

def test_scalar_file_is_20_bytes(tmp_path):
    write_tensor_file(np.float32(1.0), tmp_path / "s.cbtf")
    assert (tmp_path / "s.cbtf").stat().st_size == 4 + 2 + 1 + 1 + 8 + 4


def test_header_layout():
    buf = encode(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert buf[:4] == b"CBTF"
    version, dtype, rank = struct.unpack("<HBB", buf[4:8])
    assert (dtype, rank) == (2, 2)
    assert struct.unpack("<QQ", buf[8:24]) == (2, 3)
    assert len(buf) == 24 + 6 * 8


@pytest.mark.parametrize("shape,dtype", [((5, 8405), np.float32), ((3, 7, 2), np.float64), ((0, 4), np.float32)])
def test_roundtrip_bitwise(tmp_path, shape, dtype):
    x = stream(0, "rt").normal(size=shape).astype(dtype)
    write_tensor_file(x, tmp_path / "x.cbtf")
    y = read_tensor_file(tmp_path / "x.cbtf")
    assert y.dtype == dtype and y.shape == shape
    assert x.tobytes() == y.tobytes()


def test_format_errors():
    buf = encode(np.ones((2, 3), np.float32))
    with pytest.raises(FormatError):
        decode(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match=r"24.*20|20.*24"):
        decode(buf[:-4])
    with pytest.raises(FormatError):
        decode(buf[:10])
    with pytest.raises((FormatError, TypeError, ValueError)):
        encode(np.ones(3, dtype=np.int32))


# generation

def test_snr_measured():
    cfg = SynthConfig(n_episodes=1, clips_per_episode=40, V=1000, eeg_channels=4, snr_db=20.0,
                      train_episodes=1, test_episodes=0)
    run = synthesize_episode(cfg, 0)
    noise = run.fmri - run.fmri_clean
    ratio = run.fmri_clean.var(0) / noise.var(0)
    assert abs(10 * np.log10(ratio.mean()) - 20.0) <= 1.5


def test_generation_deterministic(tmp_path):
    a = generate_dataset(TINY, tmp_path / "a")
    b = generate_dataset(TINY, tmp_path / "b")
    for ca, cb in zip(a["clips"], b["clips"]):
        assert ca["files"]["video"]["sha256"] == cb["files"]["video"]["sha256"]
    for ea, eb in zip(a["episodes"], b["episodes"]):
        for k in ea["runs"]:
            pa, pb = tmp_path / "a" / ea["runs"][k]["path"], tmp_path / "b" / eb["runs"][k]["path"]
            assert pa.read_bytes() == pb.read_bytes()


def test_class_ids_in_range():
    r = stream(0, "cls")
    c = class_from_latents(r.normal(size=(500, 8)), r.normal(size=(500, 8)), 64)
    assert c.min() >= 0 and c.max() < 64 and len(np.unique(c)) > 40


def test_presets_validate():
    for cfg in PRESETS.values():
        cfg.validate()
    assert (FULLSCALE.V, FULLSCALE.eeg_samples, FULLSCALE.frames_per_clip) == (8405, 4000, 33)
    with pytest.raises(ValueError):
        DESK.replace(V=0).validate()


def test_quiet_eeg_chain_is_near_identity():
    cfg = DESK.replace(powerline_amp=0.0, ecg_coupling=0.0, snr_db=40.0, n_episodes=1,
                       train_episodes=1, test_episodes=0)
    run = synthesize_episode(cfg, 0, draw_mixing(cfg))
    out = clean_eeg(RawEEGRun(run.eeg, run.ecg, run.tr_events, cfg.eeg_fs)).data
    x = (run.eeg - run.eeg.mean(1, keepdims=True)) / run.eeg.std(1, keepdims=True)
    assert np.linalg.norm(out - x) / np.linalg.norm(x) < 0.05


# splits and manifest

def _fake_manifest(episodes, clips):
    return {"episodes": [{"id": e} for e in range(episodes)],
            "clips": [{"id": e * clips + k, "episode": e} for e in range(episodes) for k in range(clips)]}


def test_fullscale_split_counts():
    m = split_train_test(_fake_manifest(20, 270), 18, 2)
    assert (len(m["split"]["train"]), len(m["split"]["test"])) == (4860, 540)


def test_nine_one_split_partition():
    m = split_train_test(_fake_manifest(10, 7), 9, 1)
    tr, te = set(m["split"]["train"]), set(m["split"]["test"])
    assert (len(tr), len(te)) == (63, 7)
    assert not tr & te and tr | te == set(range(70))
    test_eps = {c["episode"] for c in m["clips"] if c["id"] in te}
    assert test_eps == {9}


def test_split_must_cover_episodes():
    with pytest.raises(ValueError):
        split_train_test(_fake_manifest(10, 3), 9, 2)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(TINY, root / "raw")
    preprocess_dataset(root / "raw", root / "pre")
    return root


def test_manifest_integrity(tiny_dataset):
    for sub in ("raw", "pre"):
        m = load_manifest(tiny_dataset / sub)
        verify_manifest(m, tiny_dataset / sub)


def test_manifest_detects_corruption(tiny_dataset, tmp_path):
    m = load_manifest(tiny_dataset / "raw")
    bad = dict(m, split={"train": m["split"]["train"], "test": m["split"]["train"][:1]})
    with pytest.raises(ManifestError):
        verify_manifest(bad, tiny_dataset / "raw", checksums=False)
    ref = m["clips"][0]["files"]["video"]
    bad = dict(m, clips=[dict(m["clips"][0], files={"video": dict(ref, sha256="0" * 64)})] + m["clips"][1:])
    with pytest.raises(ManifestError):
        verify_manifest(bad, tiny_dataset / "raw")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)


def test_preprocessed_clips_load(tiny_dataset):
    arrays = load_clips(tiny_dataset / "pre")
    n = TINY.n_episodes * TINY.clips_per_episode
    assert arrays.fmri.shape == (n, 5, TINY.V)
    assert arrays.eeg.shape == (n, TINY.eeg_channels, TINY.eeg_samples)
    assert arrays.video.shape == (n, TINY.frames_per_clip, TINY.frame_size, TINY.frame_size, 3)
    assert len(arrays.train_idx) == 8 and len(arrays.test_idx) == 4
    prov = load_manifest(tiny_dataset / "pre")["preprocessing"][-1]
    assert all(r["dropped_clips"] == 1 for r in prov["runs"])
    with pytest.raises(ManifestError):
        load_clips(tiny_dataset / "raw")
