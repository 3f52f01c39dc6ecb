"""Full per-run chain and the dataset-level driver.

EEG: band-pass, notch, QRS template subtraction, ICA cleanup, per-channel
standardization. fMRI: per-voxel z-score with the lag kept in the index map.
Both are then cut into TR-locked clips.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..synthdata.cbtf import read_tensor_file, write_tensor_file
from ..synthdata.dataset import clip_stem, episode_dir, load_manifest, save_manifest
from .cardiac import qrs_artifact_removal
from .epoching import epoch_align, zscore_with_lag
from .filters import bandpass_filter, notch_filter
from .ica import fastica_cleanup
from .runs import EpochedSample, RawEEGRun, RawFMRIRun

log = logging.getLogger(__name__)


@dataclass
class PreprocConfig:
    low: float = 0.1
    high: float = 30.0
    notch: float = 50.0
    ica_components: int = 20
    ica_threshold: float = 0.8
    lag_seconds: float = 4.0
    clip_seconds: float = 4.0
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunResult:
    samples: list[EpochedSample]
    log: dict = field(default_factory=dict)


def clean_eeg(run: RawEEGRun, cfg: PreprocConfig = PreprocConfig()) -> RawEEGRun:
    """EEG chain up to, and including, per-channel standardization."""
    x = bandpass_filter(run.data, run.fs, cfg.low, cfg.high)
    run = run.with_data(x, {"step": "bandpass", "low": cfg.low, "high": cfg.high})
    if run.fs > 2 * cfg.notch:
        run = run.with_data(notch_filter(run.data, run.fs, cfg.notch), {"step": "notch", "f0": cfg.notch})
    else:
        run = run.with_data(run.data, {"step": "notch", "flag": "skipped_fs_too_low"})
    run = qrs_artifact_removal(run)
    x, info = fastica_cleanup(run.data, run.ecg, cfg.ica_components, cfg.ica_threshold, cfg.seed)
    run = run.with_data(x, info)
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return run.with_data((x - mu) / np.maximum(sd, 1e-30), {"step": "standardize"})


def preprocess_run(fmri: RawFMRIRun, eeg: RawEEGRun, cfg: PreprocConfig = PreprocConfig(),
                   episode_id: int = 0) -> RunResult:
    eeg.check_events(fmri.tr_seconds)
    z = zscore_with_lag(fmri, cfg.lag_seconds)
    cleaned = clean_eeg(eeg, cfg)
    samples, dropped = epoch_align(z.run, cleaned, cfg.clip_seconds, z.lag_frames, episode_id)
    ica = next(s for s in cleaned.log if s.get("step") == "ica")
    qrs = next(s for s in cleaned.log if s.get("step") == "qrs")
    summary = {
        "episode": episode_id,
        "clips": len(samples),
        "dropped_clips": dropped,
        "lag_frames": z.lag_frames,
        "flagged_voxels": z.flagged.tolist(),
        "ica_removed": ica["removed"],
        "qrs_flag": qrs.get("flag", ""),
        "steps": cleaned.log,
    }
    return RunResult(samples, summary)


def _link_or_copy(src: Path, dst: Path) -> None:
    dst.parent.mkdir(parents=True, exist_ok=True)
    if dst.exists():
        dst.unlink()
    try:
        os.link(src, dst)
    except OSError:
        shutil.copy2(src, dst)


def preprocess_dataset(src, dst, cfg: PreprocConfig = PreprocConfig()) -> dict:
    """Preprocess every run of a raw dataset into clip tensors under ``dst``.

    ``dst`` may equal ``src``. Video files are hard-linked (copied if the
    file system refuses). Clips lost to the lag are removed from the manifest
    and the split.
    """
    src, dst = Path(src), Path(dst)
    m = load_manifest(src)
    syn = m["config"]
    fs = syn["eeg_samples"] / syn["clip_seconds"]
    by_key = {(c["episode"], c["clip"]): c for c in m["clips"]}
    kept, logs = [], []
    for ep in m["episodes"]:
        e = ep["id"]
        runs = {k: read_tensor_file(src / ref["path"]) for k, ref in ep["runs"].items()}
        fmri = RawFMRIRun(runs["fmri"].astype(np.float64), syn["tr_seconds"])
        eeg = RawEEGRun(runs["eeg"].astype(np.float64), runs["ecg"].reshape(-1).astype(np.float64),
                        runs["tr"].astype(np.int64), fs)
        res = preprocess_run(fmri, eeg, cfg, episode_id=e)
        for s in res.samples:
            c = by_key.get((e, s.clip_index))
            if c is None:
                continue
            stem = clip_stem(e, s.clip_index)
            c = dict(c, files=dict(c["files"]))
            if src != dst:
                vref = c["files"]["video"]
                _link_or_copy(src / vref["path"], dst / vref["path"])
            for key, arr in (("fmri", s.fmri), ("eeg", s.eeg)):
                rel = f"{stem}.{key}.cbtf"
                c["files"][key] = {"path": rel, **write_tensor_file(arr.astype(np.float32), dst / rel)}
            kept.append(c)
        logs.append(res.log)
        log_path = dst / episode_dir(e) / "preproc.log.json"
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text(json.dumps(res.log, indent=1))
        log.info("episode %d: %d clips, %d dropped, ICA removed %s", e, len(res.samples),
                 res.log["dropped_clips"], res.log["ica_removed"])

    if src != dst:
        for ep in m["episodes"]:
            for ref in ep["runs"].values():
                _link_or_copy(src / ref["path"], dst / ref["path"])
        for ref in m["mixing"].values():
            _link_or_copy(src / ref["path"], dst / ref["path"])
    ids = {c["id"] for c in kept}
    out = dict(m)
    out["clips"] = kept
    out["split"] = {k: [i for i in v if i in ids] for k, v in m["split"].items()}
    out["preprocessing"] = list(m.get("preprocessing", [])) + [{
        "stage": "preproc",
        "config": cfg.to_dict(),
        "source": str(src),
        "runs": [{k: v for k, v in r.items() if k != "steps"} for r in logs],
    }]
    save_manifest(out, dst)
    return out
