"""Per-clip metric battery over reconstructed / ground-truth clip pairs, and its serialized report."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ..numcore.rng import stream
from .metrics import frechet_distance, nway_topk_per_query, psnr, temporal_consistency, video_ssim

PER_CLIP = ("video_2way", "video_50way", "frame_2way", "frame_50way", "dtc", "ctc", "ssim", "psnr")
AGGREGATE_ONLY = ("fvd",)
LEGAL = {"video_2way": (0, 1), "video_50way": (0, 1), "frame_2way": (0, 1), "frame_50way": (0, 1),
         "dtc": (-1, 1), "ctc": (-1, 1), "ssim": (-1, 1), "psnr": (0, 99.0), "fvd": (0, np.inf)}

# column name -> report field, in table order
TABLE3_COLUMNS = {"2-way": "video_2way", "50-way": "video_50way", "FVD-surrogate": "fvd", "DTC": "dtc",
                  "CTC": "ctc", "SSIM": "ssim", "PSNR": "psnr"}
TABLE2_COLUMNS = {"2-way": "video_2way", "50-way": "video_50way", "FVD-surrogate": "fvd", "SSIM": "ssim",
                  "PSNR": "psnr"}


class ReportError(ValueError):
    pass


@dataclass
class MetricReport:
    clip_ids: list
    per_clip: dict
    aggregate: dict
    config_hash: str
    split_id: str
    metric_seed: int = 0
    trials: int = 100
    extra: dict = field(default_factory=dict)

    def validate(self) -> "MetricReport":
        n = len(self.clip_ids)
        for k, v in self.per_clip.items():
            if len(v) != n:
                raise ReportError(f"per-clip {k} has {len(v)} values for {n} clips")
            if abs(float(np.mean(v)) - self.aggregate[k]) > 1e-9:
                raise ReportError(f"aggregate {k} differs from the per-clip mean")
        for k, v in self.aggregate.items():
            lo, hi = LEGAL[k]
            if not lo <= v <= hi:
                raise ReportError(f"{k} = {v} outside [{lo}, {hi}]")
        return self

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "split_id": self.split_id, "metric_seed": self.metric_seed,
                "trials": self.trials, "clip_ids": [int(c) for c in self.clip_ids],
                "aggregate": {k: self.aggregate[k] for k in PER_CLIP + AGGREGATE_ONLY if k in self.aggregate},
                "per_clip": {k: [float(x) for x in self.per_clip[k]] for k in PER_CLIP if k in self.per_clip},
                "extra": self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        return cls(clip_ids=d["clip_ids"], per_clip=d["per_clip"], aggregate=d["aggregate"],
                   config_hash=d["config_hash"], split_id=d["split_id"], metric_seed=d["metric_seed"],
                   trials=d["trials"], extra=d.get("extra", {}))

    def row(self, columns=TABLE3_COLUMNS) -> dict:
        return {name: self.aggregate[key] for name, key in columns.items()}

    def to_csv(self, name: str = "CineSync", columns=TABLE3_COLUMNS) -> str:
        return table_csv({name: self}, columns)


def table_csv(rows: dict, columns=TABLE3_COLUMNS) -> str:
    """One CSV line per named report, in insertion order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *columns])
    for name, rep in rows.items():
        r = rep.row(columns) if isinstance(rep, MetricReport) else rep
        w.writerow([name, *(f"{r[c]:.6g}" for c in columns)])
    return buf.getvalue()


def video_descriptor(frame_emb: np.ndarray) -> np.ndarray:
    """Fixed clip descriptor for the Frechet surrogate: mean and spread of frame embeddings."""
    return np.concatenate([frame_emb.mean(axis=1), frame_emb.std(axis=1)], axis=-1)


def evaluate_clips(recon: np.ndarray, truth: np.ndarray, frame_embedder, structure_embedder, aggregator,
                   clip_ids, config_hash: str, split_id: str, trials: int = 100, seed: int = 0
                   ) -> MetricReport:
    """Full battery for (n, frames, H, W, 3) reconstructions against their ground truth.

    ``frame_embedder`` maps frames to semantic embeddings (retrieval, CTC and
    the Frechet surrogate); ``structure_embedder`` gives the DTC descriptor;
    ``aggregator`` turns a clip's frame embeddings into its video embedding
    for video-based retrieval. Frame-based retrieval matches frame f of each
    reconstruction against frame f of every ground-truth clip.
    """
    recon, truth = np.asarray(recon), np.asarray(truth)
    if recon.shape != truth.shape or recon.ndim != 5:
        raise ReportError(f"need matching (n, frames, H, W, C) arrays, got {recon.shape} and {truth.shape}")
    n, F = recon.shape[:2]
    if n < 2:
        raise ReportError("evaluation needs at least 2 clips")
    e_r, e_t = frame_embedder(recon), frame_embedder(truth)
    v_r, v_t = aggregator(e_r), aggregator(e_t)
    n50 = min(50, n)
    per = {}
    rng = stream(seed, "metrics", "video")
    per["video_2way"] = nway_topk_per_query(v_r, v_t, 2, 1, trials, rng)
    per["video_50way"] = nway_topk_per_query(v_r, v_t, n50, 1, trials, rng)
    for name, N in (("frame_2way", 2), ("frame_50way", n50)):
        rng = stream(seed, "metrics", name)
        per[name] = np.mean([nway_topk_per_query(e_r[:, f], e_t[:, f], N, 1, trials, rng) for f in range(F)],
                            axis=0)
    per["dtc"] = np.array([temporal_consistency(v, structure_embedder) for v in recon])
    per["ctc"] = np.array([temporal_consistency(v, frame_embedder) for v in recon])
    per["ssim"] = np.array([video_ssim(a, b) for a, b in zip(recon, truth)])
    per["psnr"] = np.array([psnr(a, b) for a, b in zip(recon, truth)])
    agg = {k: float(np.mean(v)) for k, v in per.items()}
    agg["fvd"] = frechet_distance(video_descriptor(e_r), video_descriptor(e_t))
    extra = {"frames": F, "n_way_large": n50}
    return MetricReport([int(c) for c in clip_ids], {k: [float(x) for x in v] for k, v in per.items()}, agg,
                        config_hash, split_id, seed, trials, extra).validate()
