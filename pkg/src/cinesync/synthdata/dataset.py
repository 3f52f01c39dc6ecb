"""On-disk dataset layout, manifest handling and the train/test split.

Layout under the dataset root::

    manifest.json
    mixing/{name}.cbtf
    episode_000/run.{fmri,eeg,ecg,tr,rpeaks}.cbtf
    episode_000/clip_0000.video.cbtf
    episode_000/clip_0000.{fmri,eeg}.cbtf      (written by preprocessing)

The manifest is JSON with a fixed top-level schema: ``version``, ``config``,
``seed``, ``mixing``, ``episodes``, ``clips``, ``split``, ``probes``,
``preprocessing``. Every file reference is ``{path, offset, nbytes, sha256}``
with ``path`` relative to the root.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cbtf import file_sha256, read_tensor_file, write_tensor_file
from .config import SynthConfig
from .generate import caption, draw_mixing, synthesize_episode

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


def episode_dir(e: int) -> str:
    return f"episode_{e:03d}"


def clip_stem(e: int, k: int) -> str:
    return f"{episode_dir(e)}/clip_{k:04d}"


def _ref(root: Path, rel: str, arr: np.ndarray) -> dict:
    info = write_tensor_file(np.asarray(arr), root / rel)
    return {"path": rel, **info}


def ridge_probe(X: np.ndarray, Y: np.ndarray, train: np.ndarray, alpha: float = 1.0) -> float:
    """Held-out R^2 of a linear ridge map X -> Y (dual form; X rows are samples).

    Features are standardized on the training rows; ``alpha`` is relative to
    the mean diagonal of the training Gram matrix.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    Y = np.asarray(Y, dtype=np.float64)
    test = ~train
    mu, sd = X[train].mean(0), X[train].std(0) + 1e-12
    Xs = (X - mu) / sd
    ym = Y[train].mean(0)
    K = Xs[train] @ Xs[train].T
    lam = alpha * np.trace(K) / len(K)
    coef = np.linalg.solve(K + lam * np.eye(len(K)), Y[train] - ym)
    pred = Xs[test] @ (Xs[train].T @ coef) + ym
    ss_res = ((Y[test] - pred) ** 2).sum()
    ss_tot = ((Y[test] - Y[test].mean(0)) ** 2).sum()
    return float(1.0 - ss_res / ss_tot)


def split_train_test(manifest: dict, train_episodes: int, test_episodes: int) -> dict:
    """Assign whole episodes: the first ``train_episodes`` train, the rest test."""
    episodes = sorted(ep["id"] for ep in manifest["episodes"])
    if train_episodes < 0 or test_episodes < 0 or train_episodes + test_episodes != len(episodes):
        raise ValueError(f"episode split {train_episodes}/{test_episodes} does not partition "
                         f"{len(episodes)} episodes")
    train_ids = set(episodes[:train_episodes])
    split = {"train": [], "test": []}
    for c in manifest["clips"]:
        split["train" if c["episode"] in train_ids else "test"].append(c["id"])
    out = dict(manifest)
    out["split"] = split
    return out


def _window_features(run, cfg: SynthConfig):
    per, lag, T = cfg.trs_per_clip, cfg.lag_frames, cfg.eeg_samples
    n = cfg.clips_per_episode
    z = (run.fmri - run.fmri.mean(0)) / (run.fmri.std(0) + 1e-12)
    f = np.stack([z[per * k + lag: per * k + lag + per].mean(0) for k in range(n)])
    e = np.stack([run.eeg[:, run.tr_events[per * k]: run.tr_events[per * k] + T] for k in range(n)])
    return f, e.reshape(n, -1) / e.std()


def generate_dataset(cfg: SynthConfig, root) -> dict:
    """Write the full synthetic dataset under ``root`` and return its manifest."""
    cfg.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    mix = draw_mixing(cfg)
    manifest = {
        "version": MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "mixing": {k: _ref(root, f"mixing/{k}.cbtf", v) for k, v in mix.items()},
        "episodes": [],
        "clips": [],
        "split": {},
        "probes": {},
        "preprocessing": [],
    }
    feats = {"fmri": [], "eeg": [], "s": [], "t": [], "episode": []}
    for e in range(cfg.n_episodes):
        run = synthesize_episode(cfg, e, mix)
        d = episode_dir(e)
        manifest["episodes"].append({
            "id": e,
            "runs": {
                "fmri": _ref(root, f"{d}/run.fmri.cbtf", run.fmri),
                "eeg": _ref(root, f"{d}/run.eeg.cbtf", run.eeg),
                "ecg": _ref(root, f"{d}/run.ecg.cbtf", run.ecg[None]),
                "tr": _ref(root, f"{d}/run.tr.cbtf", run.tr_events.astype(np.float64)),
                "rpeaks": _ref(root, f"{d}/run.rpeaks.cbtf", run.r_peaks.astype(np.float64)),
            },
            "n_frames": int(run.fmri.shape[0]),
            "n_samples": int(run.eeg.shape[1]),
        })
        for k in range(cfg.clips_per_episode):
            cid = len(manifest["clips"])
            manifest["clips"].append({
                "id": cid,
                "episode": e,
                "clip": k,
                "files": {"video": _ref(root, f"{clip_stem(e, k)}.video.cbtf",
                                        run.videos[k].astype(np.float32))},
                "spatial": run.spatial[k].tolist(),
                "temporal": run.temporal[k].tolist(),
                "class_id": int(run.class_ids[k]),
                "caption": caption(run.class_ids[k]),
            })
        f, x = _window_features(run, cfg)
        feats["fmri"].append(f)
        feats["eeg"].append(x)
        feats["s"].append(run.spatial)
        feats["t"].append(run.temporal)
        feats["episode"].append(np.full(len(f), e))
        log.info("generated episode %d", e)

    manifest = split_train_test(manifest, cfg.train_episodes, cfg.test_episodes)
    ep = np.concatenate(feats["episode"])
    train = ep < cfg.train_episodes
    F, X = np.concatenate(feats["fmri"]), np.concatenate(feats["eeg"])
    S, Tt = np.concatenate(feats["s"]), np.concatenate(feats["t"])
    manifest["probes"] = {
        "fmri_to_spatial_r2": ridge_probe(F, S, train),
        "fmri_to_temporal_r2": ridge_probe(F, Tt, train),
        "eeg_to_temporal_r2": ridge_probe(X, Tt, train),
        "eeg_to_spatial_r2": ridge_probe(X, S, train),
    }
    save_manifest(manifest, root)
    return manifest


def save_manifest(manifest: dict, root) -> None:
    path = Path(root) / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=False))
    tmp.replace(path)


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    try:
        m = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ManifestError(f"no manifest at {path}") from exc
    if m.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {m.get('version')}")
    return m


def _file_refs(manifest: dict):
    for name, ref in manifest["mixing"].items():
        yield f"mixing.{name}", ref
    for ep in manifest["episodes"]:
        for name, ref in ep["runs"].items():
            yield f"episode {ep['id']} run {name}", ref
    for c in manifest["clips"]:
        for name, ref in c["files"].items():
            yield f"clip {c['id']} {name}", ref


def verify_manifest(manifest: dict, root, checksums: bool = True) -> None:
    """Check clip accounting, split partition, byte ranges and checksums."""
    root = Path(root)
    ids = [c["id"] for c in manifest["clips"]]
    if len(set(ids)) != len(ids):
        raise ManifestError("clip referenced more than once")
    split = manifest.get("split") or {}
    tr, te = set(split.get("train", [])), set(split.get("test", []))
    if tr & te or (tr | te) != set(ids):
        raise ManifestError("split is not a partition of the clips")
    for label, ref in _file_refs(manifest):
        p = root / ref["path"]
        if not p.exists():
            raise ManifestError(f"{label}: missing file {p}")
        size = p.stat().st_size
        if ref["offset"] + ref["nbytes"] > size:
            raise ManifestError(f"{label}: byte range beyond end of {p}")
        if checksums and file_sha256(p) != ref["sha256"]:
            raise ManifestError(f"{label}: checksum mismatch for {p}")


@dataclass
class ClipArrays:
    """All clips of a dataset held in memory, indexed by clip id."""

    fmri: np.ndarray        # (n, 5, V) float32
    eeg: np.ndarray         # (n, channels, T) float32
    video: np.ndarray       # (n, frames, H, W, 3) float32
    spatial: np.ndarray
    temporal: np.ndarray
    class_ids: np.ndarray
    episode: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def subset(self, idx: np.ndarray) -> "ClipArrays":
        keep = np.asarray(idx)
        pos = {c: i for i, c in enumerate(keep)}
        return ClipArrays(self.fmri[keep], self.eeg[keep], self.video[keep], self.spatial[keep],
                          self.temporal[keep], self.class_ids[keep], self.episode[keep],
                          np.array([pos[i] for i in self.train_idx if i in pos], dtype=np.int64),
                          np.array([pos[i] for i in self.test_idx if i in pos], dtype=np.int64))


def load_clips(root, manifest: dict | None = None) -> ClipArrays:
    """Read every preprocessed clip into memory."""
    root = Path(root)
    manifest = load_manifest(root) if manifest is None else manifest
    clips = sorted(manifest["clips"], key=lambda c: c["id"])
    if not clips:
        raise ManifestError("dataset has no clips")
    missing = [c["id"] for c in clips if "fmri" not in c["files"] or "eeg" not in c["files"]]
    if missing:
        raise ManifestError(f"{len(missing)} clips lack preprocessed fmri/eeg files (run preprocess first)")
    read = lambda c, k: read_tensor_file(root / c["files"][k]["path"]).astype(np.float32)
    fmri = np.stack([read(c, "fmri") for c in clips])
    eeg = np.stack([read(c, "eeg") for c in clips])
    video = np.stack([read(c, "video") for c in clips])
    ids = np.array([c["id"] for c in clips])
    index = {cid: i for i, cid in enumerate(ids)}
    return ClipArrays(
        fmri=fmri, eeg=eeg, video=video,
        spatial=np.array([c["spatial"] for c in clips]),
        temporal=np.array([c["temporal"] for c in clips]),
        class_ids=np.array([c["class_id"] for c in clips]),
        episode=np.array([c["episode"] for c in clips]),
        train_idx=np.array([index[i] for i in manifest["split"]["train"] if i in index], dtype=np.int64),
        test_idx=np.array([index[i] for i in manifest["split"]["test"] if i in index], dtype=np.int64),
    )
