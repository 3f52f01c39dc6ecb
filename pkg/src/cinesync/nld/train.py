"""Diffusion objective, unconditional base warm-up and LoRA fine-tuning on z_b."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..checkpoint import config_hash, load_checkpoint, read_header, save_checkpoint
from ..numcore import tensor as T
from ..numcore.optim import AdamW, clip_grad_norm, warmup_cosine
from ..numcore.rng import stream
from ..numcore.tensor import NonFiniteError, Tensor
from .codec import PatchCodec
from .model import DiTConfig, DiTLite
from .schedule import NoiseSchedule, forward_diffuse, sample_timesteps

log = logging.getLogger(__name__)


class DecoderDiverged(RuntimeError):
    def __init__(self, msg: str, checkpoint: Path | None = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class DecoderTrainConfig:
    warmup_steps: int = 300         # unconditional base training, then the base is frozen
    lora_steps: int = 1000
    batch_size: int = 16
    lr: float = 3e-3
    lr_warmup: int = 20
    min_lr_frac: float = 0.1
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.95)
    grad_clip: float = 1.0
    stratified: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def diffusion_loss(denoiser, x0: np.ndarray, z_b, schedule: NoiseSchedule, rng: np.random.Generator,
                   stratified: bool = True):
    """Mean squared error between drawn noise and ``denoiser(x_t, z_b, t)``.

    Returns (loss, t, eps). ``denoiser`` may be any callable, which lets tests
    substitute exact or trivial noise predictors.
    """
    x0 = np.asarray(x0, dtype=np.float32)
    t = sample_timesteps(len(x0), schedule.T, rng, stratified)
    eps = rng.standard_normal(x0.shape, dtype=np.float32)
    x_t = forward_diffuse(x0, t, schedule, eps)
    pred = denoiser(x_t, z_b, t)
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred, dtype=np.float32))
    return ((pred - eps) ** 2).mean(), t, eps


@dataclass
class DecoderBundle:
    """Denoiser plus the latent codec and the data scale it was trained with."""

    model: DiTLite
    codec: PatchCodec
    scale: float
    train_cfg: DecoderTrainConfig = DecoderTrainConfig()
    log: list = field(default_factory=list)

    @property
    def cfg(self) -> DiTConfig:
        return self.model.cfg

    def to_latent(self, video: np.ndarray) -> np.ndarray:
        return (self.codec.encode(2.0 * np.asarray(video, np.float64) - 1.0) * self.scale).astype(np.float32)

    def to_video(self, latent: np.ndarray) -> np.ndarray:
        v = self.codec.decode(np.asarray(latent, np.float64) / self.scale) * 0.5 + 0.5
        return np.clip(v, 0.0, 1.0).astype(np.float32)


def latent_scale(codec: PatchCodec, video: np.ndarray) -> float:
    """1 / std of the centred training latents, so x0 has roughly unit scale."""
    z = codec.encode(2.0 * np.asarray(video, np.float64) - 1.0)
    return float(1.0 / max(z.std(), 1e-6))


def _run_phase(bundle: DecoderBundle, x0: np.ndarray, z_b, train_idx, phase: str, steps: int,
               tc: DecoderTrainConfig, start: int = 0, on_step=None) -> None:
    model = bundle.model
    params = model.parameters()
    opt = AdamW(params, lr=tc.lr, betas=tc.betas, weight_decay=tc.weight_decay)
    sched = model.schedule
    for step in range(start, steps):
        rng = stream(tc.seed, "decoder", phase, step)
        b = rng.choice(train_idx, size=min(tc.batch_size, len(train_idx)), replace=False)
        t0 = time.process_time()
        opt.zero_grad()
        loss, t, _ = diffusion_loss(model, x0[b], None if z_b is None else z_b[b], sched, rng, tc.stratified)
        loss.backward()
        gnorm = clip_grad_norm(params, tc.grad_clip)
        opt.set_lr(warmup_cosine(step, steps, tc.lr, tc.lr_warmup, tc.min_lr_frac))
        opt.step()
        rec = {"phase": phase, "step": step, "loss": float(loss.data), "grad_norm": gnorm,
               "cpu_s": time.process_time() - t0}
        bundle.log.append(rec)
        if on_step is not None:
            on_step(rec)


def make_decoder(cfg: DiTConfig, videos: np.ndarray, tc: DecoderTrainConfig = DecoderTrainConfig()
                 ) -> DecoderBundle:
    codec = cfg.codec()
    bundle = DecoderBundle(DiTLite(cfg), codec, latent_scale(codec, videos), tc)
    bundle.model.fit_prior(bundle.to_latent(videos))
    return bundle


def warmup_base(bundle: DecoderBundle, video: np.ndarray, train_idx, on_step=None) -> None:
    """Unconditional training of every weight (null condition); stands in for a pretrained base."""
    if bundle.model.adapters:
        raise RuntimeError("base warm-up must run before adapters are attached")
    x0 = bundle.to_latent(video)
    _run_phase(bundle, x0, None, train_idx, "warmup", bundle.train_cfg.warmup_steps, bundle.train_cfg,
               on_step=on_step)


def finetune_lora(bundle: DecoderBundle, video: np.ndarray, z_b: np.ndarray, train_idx, on_step=None,
                  start: int = 0) -> None:
    """Freeze the base, attach adapters and fit them (plus the new projections) to z_b."""
    bundle.model.add_lora()
    x0 = bundle.to_latent(video)
    _run_phase(bundle, x0, np.asarray(z_b, np.float32), train_idx, "lora", bundle.train_cfg.lora_steps,
               bundle.train_cfg, start=start, on_step=on_step)


def decoder_meta(bundle: DecoderBundle, **extra) -> dict:
    cfg, tc = bundle.cfg.to_dict(), bundle.train_cfg.to_dict()
    return dict(kind="decoder", config=cfg, train=tc, scale=bundle.scale, lora=bool(bundle.model.adapters),
                config_hash=config_hash({"decoder": cfg, "train": tc}), **extra)


def train_decoder(video: np.ndarray, z_b: np.ndarray, train_idx, cfg: DiTConfig,
                  tc: DecoderTrainConfig = DecoderTrainConfig(), out_dir=None, base: DecoderBundle | None = None,
                  encoder_hash: str | None = None) -> DecoderBundle:
    """Warm up a base (unless ``base`` is given, whose weights are copied) and fit LoRA on z_b.

    The log gets one record per step; with ``out_dir`` it is written as JSON
    lines next to a checkpoint. A non-finite loss restores the last finished
    phase's weights, saves them and raises :class:`DecoderDiverged`.
    """
    bundle = make_decoder(cfg, video[train_idx], tc)
    out_dir = Path(out_dir) if out_dir is not None else None
    logf = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        logf = open(out_dir / "train_log.jsonl", "w")

    def on_step(rec):
        if logf is not None:
            logf.write(json.dumps(rec) + "\n")
        if rec["step"] % 50 == 0:
            log.info("decoder %s step %d loss %.4f", rec["phase"], rec["step"], rec["loss"])

    good = bundle.model.state_dict()
    try:
        if base is None:
            warmup_base(bundle, video, train_idx, on_step)
        else:
            bundle.model.load_state_dict(base.model.state_dict())
            bundle.scale = base.scale
            bundle.log.extend(r for r in base.log if r["phase"] == "warmup")
        good = bundle.model.state_dict()
        finetune_lora(bundle, video, z_b, train_idx, on_step)
    except NonFiniteError as exc:
        _restore(bundle.model, good)
        ck = None
        if out_dir is not None:
            ck = save_checkpoint(out_dir / "checkpoint", {"decoder": bundle.model},
                                 decoder_meta(bundle, diverged=True, encoder_hash=encoder_hash))
        raise DecoderDiverged(f"decoder training diverged: {exc}", ck) from exc
    finally:
        if logf is not None:
            logf.close()
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint", {"decoder": bundle.model},
                        decoder_meta(bundle, encoder_hash=encoder_hash))
    return bundle


def _restore(model: DiTLite, good: dict) -> None:
    """Weights from ``good``; adapters created since then go back to their zero update."""
    state = model.state_dict()
    for k, v in state.items():
        state[k] = good[k] if k in good else (np.zeros_like(v) if k.endswith(".adapter.B") else v)
    model.load_state_dict(state)


def load_decoder(path) -> DecoderBundle:
    h = read_header(path)
    if h.get("kind") != "decoder":
        raise ValueError(f"{path} is not a decoder checkpoint")
    cfg = DiTConfig(**h["config"])
    t = dict(h["train"])
    t["betas"] = tuple(t["betas"])
    model = DiTLite(cfg)
    if h["lora"]:
        model.add_lora()
    load_checkpoint(path, {"decoder": model})
    return DecoderBundle(model, cfg.codec(), float(h["scale"]), DecoderTrainConfig(**t))
