"""Experiment configuration: named presets, JSON overrides, validation and per-stage hashes.

A config file is a JSON object. Every key is optional; ``preset`` picks the
starting point and the section keys override single fields:

    {
      "preset": "desk",                  # desk | complementary | fullscale-shapes
      "seed": 0,                         # training, sampling and metric seed
      "synth":          {SynthConfig fields},
      "preproc":        {PreprocConfig fields},
      "encoder":        {EncoderConfig fields},
      "encoder_train":  {EncoderTrainConfig fields; "flags": {"vision", "text", "across"}},
      "decoder":        {DiTConfig fields},
      "decoder_train":  {DecoderTrainConfig fields},
      "sampling":       {"sampler": "ddpm"|"ddim", "steps": int, "eval_clips": int|null,
                         "shuffled_control": bool},
      "metrics":        {"trials": int},
      "ablation":       {"decoder_train": {...}, "sampling": {...}}   # lighter decoder for table rows
    }
"""
from __future__ import annotations

import copy
import dataclasses
import json
from pathlib import Path

from ..checkpoint import config_hash
from ..mfe import ENCODER_DESK, ENCODER_FULLSCALE, EncoderConfig, EncoderConfigError, EncoderTrainConfig, LossFlags
from ..nld import DECODER_DESK, DecoderConfigError, DecoderTrainConfig, DiTConfig
from ..preproc import PreprocConfig
from ..synthdata import PRESETS as SYNTH_PRESETS
from ..synthdata import SynthConfig


class ConfigError(ValueError):
    pass


SAMPLING = {"sampler": "ddpm", "steps": 50, "eval_clips": None, "shuffled_control": True}
METRICS = {"trials": 100}
ABLATION = {"decoder_train": {"lora_steps": 250},
            "sampling": {"steps": 25, "eval_clips": 64, "shuffled_control": False}}

SECTIONS = ("synth", "preproc", "encoder", "encoder_train", "decoder", "decoder_train", "sampling", "metrics",
            "ablation")
DATACLASSES = {"synth": SynthConfig, "preproc": PreprocConfig, "encoder": EncoderConfig,
               "encoder_train": EncoderTrainConfig, "decoder": DiTConfig, "decoder_train": DecoderTrainConfig}


def _dc_dict(obj) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(obj)))


def _encoder_for(synth: SynthConfig, full: bool) -> EncoderConfig:
    base = ENCODER_FULLSCALE if full else ENCODER_DESK
    return base.replace(V=synth.V, eeg_channels=synth.eeg_channels, eeg_samples=synth.eeg_samples)


def preset(name: str) -> dict:
    if name not in SYNTH_PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; expected one of {sorted(SYNTH_PRESETS)}")
    synth = SYNTH_PRESETS[name]
    full = name == "fullscale-shapes"
    dec = DECODER_DESK.replace(frames=synth.frames_per_clip, frame_size=synth.frame_size)
    if full:   # shape-only preset: keep the decoder geometry consistent with 33-frame clips
        dec = dec.replace(patch_t=3)
    enc = _encoder_for(synth, full)
    return {"preset": name, "seed": 0, "synth": _dc_dict(synth), "preproc": _dc_dict(PreprocConfig()),
            "encoder": _dc_dict(enc), "encoder_train": _dc_dict(EncoderTrainConfig()),
            "decoder": _dc_dict(dec.replace(cond_tokens=enc.token_count, cond_dim=enc.hidden_dim)),
            "decoder_train": _dc_dict(DecoderTrainConfig()), "sampling": dict(SAMPLING),
            "metrics": dict(METRICS), "ablation": copy.deepcopy(ABLATION)}


def _merge(base: dict, over: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in out:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected an object, got {type(v).__name__}")
            out[k] = _merge(out[k], v, where)
        else:
            out[k] = v
    return out


def resolve(raw: dict | None = None, seed: int | None = None) -> dict:
    """Preset plus overrides, validated; raises ConfigError naming the offending field."""
    raw = dict(raw or {})
    if not isinstance(raw.get("preset", "desk"), str):
        raise ConfigError("preset: expected a preset name")
    cfg = preset(raw.pop("preset", "desk"))
    name = cfg.pop("preset")
    abl = raw.pop("ablation", {})
    cfg = _merge(cfg, raw, "")
    if not isinstance(abl, dict):
        raise ConfigError("ablation: expected an object")
    for sec, over in abl.items():
        if sec not in cfg["ablation"]:
            raise ConfigError(f"ablation.{sec}: unknown field")
        _merge(cfg[sec], over, f"ablation.{sec}")          # same fields as the main section
        cfg["ablation"][sec] = {**cfg["ablation"][sec], **over}
    cfg["preset"] = name
    if seed is not None:
        cfg["seed"] = seed
    build(cfg)
    return cfg


def load(path_or_preset: str | None, seed: int | None = None) -> dict:
    if path_or_preset is None:
        return resolve({}, seed)
    p = Path(path_or_preset)
    if not p.is_file():
        if path_or_preset in SYNTH_PRESETS:
            return resolve({"preset": path_or_preset}, seed)
        raise ConfigError(f"config: no such file or preset {path_or_preset!r}")
    try:
        raw = json.loads(p.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config: {p} is not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    return resolve(raw, seed)


def _make(section: str, values: dict):
    cls = DATACLASSES[section]
    values = dict(values)
    if section == "encoder_train":
        values["flags"] = LossFlags(**values["flags"])
        values["betas"] = tuple(values["betas"])
    if section == "decoder_train":
        values["betas"] = tuple(values["betas"])
    try:
        obj = cls(**values)
        if hasattr(obj, "validate"):
            obj.validate()
    except (EncoderConfigError, DecoderConfigError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc
    return obj


def build(cfg: dict) -> dict:
    """Typed objects for every section (also the validation pass)."""
    seed = cfg["seed"]
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    objs = {s: _make(s, cfg[s]) for s in DATACLASSES}
    objs["encoder_train"] = dataclasses.replace(objs["encoder_train"], seed=seed)
    objs["decoder_train"] = dataclasses.replace(objs["decoder_train"], seed=seed)
    syn, enc, dec = objs["synth"], objs["encoder"], objs["decoder"]
    for field, want in (("V", syn.V), ("eeg_channels", syn.eeg_channels), ("eeg_samples", syn.eeg_samples)):
        if getattr(enc, field) != want:
            raise ConfigError(f"encoder.{field}: {getattr(enc, field)} does not match synth ({want})")
    pre = objs["preproc"]
    if syn.eeg_fs <= 2 * max(pre.high, pre.notch):
        raise ConfigError(f"synth.eeg_samples: EEG rate {syn.eeg_fs:g} Hz must exceed twice the preproc "
                          f"high cutoff and notch ({pre.high:g}, {pre.notch:g} Hz)")
    if (dec.frames, dec.frame_size) != (syn.frames_per_clip, syn.frame_size):
        raise ConfigError("decoder.frames/frame_size: must match synth.frames_per_clip/frame_size")
    if (dec.cond_tokens, dec.cond_dim) != (enc.token_count, enc.hidden_dim):
        raise ConfigError(f"decoder.cond_tokens/cond_dim: must equal the encoder's fused token shape "
                          f"({enc.token_count}, {enc.hidden_dim})")
    s = cfg["sampling"]
    if s["sampler"] not in ("ddpm", "ddim"):
        raise ConfigError(f"sampling.sampler: expected 'ddpm' or 'ddim', got {s['sampler']!r}")
    if not isinstance(s["steps"], int) or not 1 <= s["steps"] <= dec.T:
        raise ConfigError(f"sampling.steps: must be an integer in 1..{dec.T}, got {s['steps']!r}")
    if s["eval_clips"] is not None and (not isinstance(s["eval_clips"], int) or s["eval_clips"] < 2):
        raise ConfigError("sampling.eval_clips: must be null or an integer >= 2")
    if not isinstance(cfg["metrics"]["trials"], int) or cfg["metrics"]["trials"] < 1:
        raise ConfigError("metrics.trials: must be a positive integer")
    return objs


def for_ablation(cfg: dict, **sections) -> dict:
    """Row config: the lighter decoder settings of ``ablation`` plus per-row section overrides."""
    over = {"decoder_train": cfg["ablation"]["decoder_train"], "sampling": cfg["ablation"]["sampling"]}
    out = _merge(cfg, over, "")
    for k, v in sections.items():
        out = _merge(out, {k: v}, "")
    build(out)
    return out


# stage -> config sections it depends on (in order); the hash of these names the stage directory
STAGE_DEPS = {
    "synth": ("synth",),
    "preprocess": ("synth", "preproc"),
    "encoder": ("synth", "preproc", "encoder", "encoder_train", "seed"),
    "decoder-base": ("synth", "preproc", "decoder", "decoder_train", "seed"),
    "decoder": ("synth", "preproc", "encoder", "encoder_train", "decoder", "decoder_train", "seed"),
    "reconstruct": ("synth", "preproc", "encoder", "encoder_train", "decoder", "decoder_train", "sampling",
                    "seed"),
    "evaluate": ("synth", "preproc", "encoder", "encoder_train", "decoder", "decoder_train", "sampling",
                 "metrics", "seed"),
}


def stage_hash(cfg: dict, stage: str) -> str:
    part = {k: cfg[k] for k in STAGE_DEPS[stage]}
    if stage == "decoder-base":       # the unconditional warm-up ignores LoRA-phase settings
        part["decoder_train"] = {k: v for k, v in part["decoder_train"].items() if k != "lora_steps"}
    return config_hash(part)
