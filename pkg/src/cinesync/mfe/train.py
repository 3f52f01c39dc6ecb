"""Contrastive training of the fusion encoder, psi and phi."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..checkpoint import config_hash, load_checkpoint, save_checkpoint
from ..evalkit.metrics import nway_topk
from ..numcore import tensor as T
from ..numcore.optim import AdamW, clip_grad_norm, warmup_cosine
from ..numcore.rng import stream
from ..numcore.tensor import NonFiniteError, Tensor
from ..synthdata.dataset import ClipArrays
from .config import EncoderConfig
from .losses import TERMS, LossFlags, total_contrastive_loss
from .model import FusionEncoder, TemporalAggregator
from .stubs import StubTextEncoder, StubVideoEncoder

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, checkpoint: Path | None = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class EncoderTrainConfig:
    epochs: int = 12
    batch_size: int = 64
    lr: float = 1e-3
    min_lr_frac: float = 0.1
    warmup_steps: int = 20
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.95)
    grad_clip: float = 1.0
    input_noise: float = 1.0    # std of Gaussian noise added to standardized brain inputs
    flags: LossFlags = LossFlags()
    seed: int = 0
    eval_trials: int = 100

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EncoderBundle:
    """Trained encoder with its aggregator and the frozen stubs it was aligned to."""

    encoder: FusionEncoder
    phi: TemporalAggregator
    stub_v: StubVideoEncoder
    stub_t: StubTextEncoder
    cfg: EncoderConfig
    train_cfg: EncoderTrainConfig
    log: list = field(default_factory=list)

    def modules(self) -> dict:
        return {"encoder": self.encoder, "phi": self.phi}

    def frame_embeddings(self, video: np.ndarray) -> np.ndarray:
        return self.stub_v(video)

    def encode(self, arrays: ClipArrays, idx=None, batch: int = 128) -> dict:
        """Retrieval queries, class embeddings, video embeddings and z_b for the given clips."""
        idx = np.arange(len(arrays.fmri)) if idx is None else np.asarray(idx)
        out = {"query": [], "c_f": [], "c_e": [], "c_v": [], "z_b": []}
        with T.no_grad():
            for s in range(0, len(idx), batch):
                b = idx[s:s + batch]
                emb = self.encoder.encode(arrays.fmri[b], arrays.eeg[b])
                out["query"].append(self.encoder.query(emb).data)
                out["z_b"].append(self.encoder.fuse(emb).data)
                out["c_v"].append(self.phi(self.frame_embeddings(arrays.video[b])).data)
                for k in ("c_f", "c_e"):
                    c = getattr(emb, k)
                    if c is not None:
                        out[k].append(c.data)
        return {k: np.concatenate(v) if v else None for k, v in out.items()}

    def retrieval(self, arrays: ClipArrays, idx, trials: int = 100, seed: int = 0) -> dict:
        e = self.encode(arrays, idx)
        r = stream(seed, "retrieval")
        return {"2way": nway_topk(e["query"], e["c_v"], 2, 1, trials, r),
                "50way": nway_topk(e["query"], e["c_v"], min(50, len(idx)), 1, trials, r)}


def make_bundle(cfg: EncoderConfig, train_cfg: EncoderTrainConfig, frame_size: int,
                n_classes: int) -> EncoderBundle:
    return EncoderBundle(
        encoder=FusionEncoder(cfg),
        phi=TemporalAggregator(cfg.embed_dim, seed=cfg.seed),
        stub_v=StubVideoEncoder(frame_size, cfg.embed_dim, seed=cfg.seed),
        stub_t=StubTextEncoder(n_classes, cfg.embed_dim, seed=cfg.seed),
        cfg=cfg, train_cfg=train_cfg,
    )


def batch_loss(bundle: EncoderBundle, arrays: ClipArrays, b: np.ndarray, frames: np.ndarray,
               rng: np.random.Generator | None = None):
    enc = bundle.encoder
    x_f, x_e = arrays.fmri[b], arrays.eeg[b]
    sd = bundle.train_cfg.input_noise
    if rng is not None and sd > 0:
        x_f = x_f + rng.normal(0.0, sd, x_f.shape).astype(x_f.dtype)
        x_e = x_e + rng.normal(0.0, sd, x_e.shape).astype(x_e.dtype)
    emb = enc.encode(x_f, x_e)
    c_v = bundle.phi(frames[b])
    c_t = Tensor(bundle.stub_t(arrays.class_ids[b]))
    return total_contrastive_loss(emb.c_f, emb.c_e, c_v, c_t, enc.tau(), bundle.train_cfg.flags)


def heldout_loss(bundle: EncoderBundle, arrays: ClipArrays, idx) -> float:
    frames = bundle.frame_embeddings(arrays.video)
    with T.no_grad():
        total, _ = batch_loss(bundle, arrays, np.asarray(idx), frames)
    return float(total.data)


def train_encoder(arrays: ClipArrays, cfg: EncoderConfig, tc: EncoderTrainConfig = EncoderTrainConfig(),
                  frame_size: int | None = None, n_classes: int = 64, out_dir=None,
                  eval_every: int = 1) -> EncoderBundle:
    """Optimize encoder, psi, phi and temperature with AdamW; stubs stay frozen.

    Each epoch appends a record with the mean of every loss term and held-out
    retrieval accuracy on the test split (logging only, never used for
    selection). With ``out_dir`` the log is written as JSON lines and the
    final (or last good, on divergence) state as a checkpoint.
    """
    frame_size = frame_size or arrays.video.shape[2]
    bundle = make_bundle(cfg, tc, frame_size, n_classes)
    params = bundle.encoder.parameters() + bundle.phi.parameters()
    opt = AdamW(params, lr=tc.lr, betas=tc.betas, weight_decay=tc.weight_decay)
    frames = bundle.frame_embeddings(arrays.video)
    train_idx = arrays.train_idx
    steps_per_epoch = max(1, len(train_idx) // tc.batch_size)
    total_steps = steps_per_epoch * tc.epochs
    out_dir = Path(out_dir) if out_dir is not None else None
    meta = {"kind": "encoder", "config": cfg.to_dict(), "train": tc.to_dict(),
            "config_hash": config_hash({"encoder": cfg.to_dict(), "train": tc.to_dict()})}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "train_log.jsonl").write_text("")
    good = {k: m.state_dict() for k, m in bundle.modules().items()}
    step = 0
    for epoch in range(1, tc.epochs + 1):
        t0 = time.process_time()
        order = stream(tc.seed, "encoder-batches", epoch).permutation(train_idx)
        aug = stream(tc.seed, "encoder-noise", epoch)
        sums = dict.fromkeys(TERMS, 0.0)
        sums["total"] = 0.0
        try:
            for i in range(steps_per_epoch):
                b = order[i * tc.batch_size:(i + 1) * tc.batch_size]
                opt.zero_grad()
                total, br = batch_loss(bundle, arrays, b, frames, aug)
                total.backward()
                clip_grad_norm(params, tc.grad_clip)
                opt.set_lr(warmup_cosine(step, total_steps, tc.lr, tc.warmup_steps, tc.min_lr_frac))
                opt.step()
                step += 1
                for k, v in br.items():
                    sums[k] += v / steps_per_epoch
                sums["total"] += float(total.data) / steps_per_epoch
        except NonFiniteError as exc:
            for k, m in bundle.modules().items():
                m.load_state_dict(good[k])
            ck = None
            if out_dir is not None:
                ck = save_checkpoint(out_dir / "checkpoint", bundle.modules(),
                                     dict(meta, step=step, epoch=epoch - 1, diverged=True))
            raise TrainingDiverged(f"encoder training diverged in epoch {epoch}: {exc}", ck) from exc
        good = {k: m.state_dict() for k, m in bundle.modules().items()}
        rec = {"epoch": epoch, "step": step, **{f"loss_{k}": v for k, v in sums.items()},
               "temperature": float(bundle.encoder.tau().data), "cpu_s": time.process_time() - t0}
        if len(arrays.test_idx) >= 2 and (epoch % eval_every == 0 or epoch == tc.epochs):
            rec.update({f"heldout_{k}": v for k, v in
                        bundle.retrieval(arrays, arrays.test_idx, tc.eval_trials, tc.seed).items()})
        bundle.log.append(rec)
        log.info("encoder epoch %d: %s", epoch, json.dumps(rec))
        if out_dir is not None:
            with open(out_dir / "train_log.jsonl", "a") as f:
                f.write(json.dumps(rec) + "\n")
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint", bundle.modules(), dict(meta, step=step, epoch=tc.epochs))
    return bundle


def load_encoder(path, n_classes: int = 64, frame_size: int = 32) -> EncoderBundle:
    from ..checkpoint import read_header
    h = read_header(path)
    cfg = EncoderConfig(**h["config"])
    t = dict(h["train"])
    t["flags"] = LossFlags(**t["flags"])
    t["betas"] = tuple(t["betas"])
    bundle = make_bundle(cfg, EncoderTrainConfig(**t), frame_size, n_classes)
    load_checkpoint(path, bundle.modules())
    return bundle
