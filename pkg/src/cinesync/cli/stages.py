"""Pipeline stages with on-disk resumability under ``out/{hash}/{stage}``.

Each stage directory is named by the hash of the config sections the stage
depends on, so stages shared between configs (the dataset under every
ablation row, say) are computed once. A stage is complete when its
``stage.json`` marker exists; an incomplete directory is cleared and redone.
"""
from __future__ import annotations

import json
import logging
import shutil
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..checkpoint import config_hash, read_header, save_checkpoint
from ..evalkit import MetricReport, evaluate_clips, psnr
from ..mfe import load_encoder, structure_embedder, train_encoder
from ..nld import fused_condition, load_decoder, make_decoder, reconstruct, train_decoder
from ..nld.train import decoder_meta, warmup_base
from ..numcore import tensor as T
from ..preproc import preprocess_dataset
from ..synthdata import generate_dataset, load_clips, load_manifest, read_tensor_file, write_tensor_file
from .config import build, stage_hash

log = logging.getLogger(__name__)
MARKER = "stage.json"


class DataError(RuntimeError):
    pass


class RunLog:
    """Append-only JSON-lines log; every invocation opens a fresh numbered file."""

    def __init__(self, out: Path, command: str):
        d = Path(out) / "runs"
        d.mkdir(parents=True, exist_ok=True)
        n = 1 + max((int(p.name.split("-")[0]) for p in d.glob("*.jsonl") if p.name.split("-")[0].isdigit()),
                    default=0)
        while True:
            try:
                self.path = d / f"{n:04d}-{command}.jsonl"
                self._f = open(self.path, "x")
                break
            except FileExistsError:
                n += 1
        self._steps: dict = {}
        self.current: str | None = None      # last stage entered, named on failure

    def write(self, phase: str, **scalars) -> None:
        if scalars.get("status") in ("started", "reused") and phase != "command":
            self.current = phase
        step = self._steps.get(phase, 0)
        self._steps[phase] = step + 1
        rec = {"time": datetime.now(timezone.utc).isoformat(timespec="milliseconds"), "phase": phase,
               "step": step, **scalars}
        self._f.write(json.dumps(rec, default=str) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


class Layout:
    def __init__(self, out, cfg: dict, runlog: RunLog | None = None):
        self.out, self.cfg, self.runlog = Path(out), cfg, runlog
        self.objs = build(cfg)

    def dir(self, stage: str) -> Path:
        return self.out / stage_hash(self.cfg, stage) / stage

    def done(self, stage: str) -> bool:
        return (self.dir(stage) / MARKER).exists()

    def begin(self, stage: str) -> Path | None:
        """Directory to (re)build, or None when the stage is already complete."""
        d = self.dir(stage)
        if self.done(stage):
            self.note(stage, status="reused", dir=str(d))
            return None
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        self.note(stage, status="started", dir=str(d))
        return d

    def finish(self, stage: str, cpu_s: float, **info) -> None:
        d = self.dir(stage)
        rec = {"stage": stage, "config_hash": stage_hash(self.cfg, stage), "cpu_s": cpu_s, **info}
        (d / MARKER).write_text(json.dumps(rec, indent=1, default=str))
        self.note(stage, status="done", cpu_s=cpu_s, **info)

    def note(self, stage: str, **scalars) -> None:
        log.info("%s: %s", stage, scalars)
        if self.runlog is not None:
            self.runlog.write(stage, **scalars)


def _timed(fn):
    t0 = time.process_time()
    info = fn() or {}
    return time.process_time() - t0, info


# ---------------------------------------------------------------------- stages
def run_synth(L: Layout) -> Path:
    d = L.begin("synth")
    if d is not None:
        cpu, _ = _timed(lambda: generate_dataset(L.objs["synth"], d) and {})
        L.finish("synth", cpu)
    return L.dir("synth")


def run_preprocess(L: Layout) -> Path:
    src = run_synth(L)
    d = L.begin("preprocess")
    if d is not None:
        cpu, _ = _timed(lambda: preprocess_dataset(src, d, L.objs["preproc"]) and {})
        L.finish("preprocess", cpu)
    return L.dir("preprocess")


def dataset(L: Layout):
    root = run_preprocess(L)
    return load_clips(root)


def run_encoder(L: Layout, arrays=None) -> Path:
    d = L.dir("encoder")
    if L.done("encoder"):
        L.begin("encoder")
        return d
    arrays = dataset(L) if arrays is None else arrays
    d = L.begin("encoder")
    syn = L.objs["synth"]

    def fit():
        b = train_encoder(arrays, L.objs["encoder"], L.objs["encoder_train"], frame_size=syn.frame_size,
                          n_classes=syn.n_classes, out_dir=d)
        last = b.log[-1]
        return {k: last[k] for k in ("heldout_2way", "heldout_50way", "loss_total") if k in last}

    cpu, info = _timed(fit)
    L.finish("encoder", cpu, **info)
    return d


def encoder_bundle(L: Layout, arrays=None):
    d = run_encoder(L, arrays)
    syn = L.objs["synth"]
    return load_encoder(d / "checkpoint", n_classes=syn.n_classes, frame_size=syn.frame_size)


def run_decoder_base(L: Layout, arrays=None) -> Path:
    d = L.dir("decoder-base")
    if L.done("decoder-base"):
        L.begin("decoder-base")
        return d
    arrays = dataset(L) if arrays is None else arrays
    d = L.begin("decoder-base")

    def fit():
        tc = L.objs["decoder_train"]
        bundle = make_decoder(L.objs["decoder"], arrays.video[arrays.train_idx], tc)
        with open(d / "train_log.jsonl", "w") as f:
            warmup_base(bundle, arrays.video, arrays.train_idx, lambda r: f.write(json.dumps(r) + "\n"))
        save_checkpoint(d / "checkpoint", {"decoder": bundle.model}, decoder_meta(bundle))
        return {"final_loss": float(np.mean([r["loss"] for r in bundle.log[-20:]]))}

    cpu, info = _timed(fit)
    L.finish("decoder-base", cpu, **info)
    return d


def conditions(L: Layout, arrays, enc=None) -> np.ndarray:
    enc = encoder_bundle(L, arrays) if enc is None else enc
    return fused_condition(enc, arrays.fmri, arrays.eeg)


def run_decoder(L: Layout, arrays=None) -> Path:
    d = L.dir("decoder")
    if L.done("decoder"):
        L.begin("decoder")
        return d
    arrays = dataset(L) if arrays is None else arrays
    enc = encoder_bundle(L, arrays)
    base = load_decoder(run_decoder_base(L, arrays) / "checkpoint")
    z_b = conditions(L, arrays, enc)
    d = L.begin("decoder")

    def fit():
        b = train_decoder(arrays.video, z_b, arrays.train_idx, L.objs["decoder"], L.objs["decoder_train"],
                          out_dir=d, base=base, encoder_hash=stage_hash(L.cfg, "encoder"))
        lora = [r["loss"] for r in b.log if r["phase"] == "lora"]
        return {"lora_loss_first100": float(np.mean(lora[:100])), "lora_loss_last100": float(np.mean(lora[-100:]))}

    cpu, info = _timed(fit)
    L.finish("decoder", cpu, **info)
    return d


def check_pair(encoder_dir: Path, decoder_dir: Path) -> None:
    """Refuse a decoder trained on another encoder's conditions."""
    enc_hash = json.loads((Path(encoder_dir) / MARKER).read_text())["config_hash"]
    got = read_header(Path(decoder_dir) / "checkpoint").get("encoder_hash")
    if got != enc_hash:
        raise DataError(f"decoder in {decoder_dir} was trained on encoder {got}, not {enc_hash}")


def eval_indices(L: Layout, arrays) -> np.ndarray:
    n = L.cfg["sampling"]["eval_clips"]
    idx = arrays.test_idx
    return idx if n is None else idx[:n]


def run_reconstruct(L: Layout, arrays=None) -> Path:
    d = L.dir("reconstruct")
    if L.done("reconstruct"):
        L.begin("reconstruct")
        return d
    arrays = dataset(L) if arrays is None else arrays
    enc_dir, dec_dir = run_encoder(L, arrays), run_decoder(L, arrays)
    check_pair(enc_dir, dec_dir)
    enc, dec = encoder_bundle(L, arrays), load_decoder(dec_dir / "checkpoint")
    d = L.begin("reconstruct")
    s = L.cfg["sampling"]

    def sample():
        idx = eval_indices(L, arrays)
        if len(idx) < 2:
            raise DataError("reconstruction needs at least 2 test clips")
        ids = load_clip_ids(L, idx)
        z_b = fused_condition(enc, arrays.fmri[idx], arrays.eeg[idx])
        run = lambda z: reconstruct(enc, dec, None, None, s["steps"], s["sampler"], L.cfg["seed"], ids, z_b=z)
        write_tensor_file(run(z_b), d / "recon.cbtf")
        (d / "index.json").write_text(json.dumps([int(i) for i in idx]))
        if s["shuffled_control"]:
            perm = np.roll(np.arange(len(idx)), len(idx) // 2)      # every clip gets another clip's z_b
            write_tensor_file(run(z_b[perm]), d / "recon_shuffled.cbtf")
        return {"clips": len(idx)}

    cpu, info = _timed(sample)
    L.finish("reconstruct", cpu, **info)
    return d


def load_clip_ids(L: Layout, idx) -> np.ndarray:
    m = load_manifest(L.dir("preprocess"))
    ids = np.array(sorted(c["id"] for c in m["clips"]))
    return ids[np.asarray(idx)]


def run_evaluate(L: Layout, arrays=None) -> MetricReport:
    d = L.dir("evaluate")
    if L.done("evaluate"):
        L.begin("evaluate")
        return MetricReport.from_json((d / "report.json").read_text())
    arrays = dataset(L) if arrays is None else arrays
    rec_dir = run_reconstruct(L, arrays)
    enc = encoder_bundle(L, arrays)
    d = L.begin("evaluate")
    trials, seed = L.cfg["metrics"]["trials"], L.cfg["seed"]

    def score():
        idx = np.array(json.loads((rec_dir / "index.json").read_text()), np.int64)
        recon = read_tensor_file(rec_dir / "recon.cbtf")
        truth = arrays.video[idx]

        def aggregator(e):
            with T.no_grad():
                return enc.phi(e).data

        ids = load_clip_ids(L, idx)
        split_id = "test-" + config_hash([int(i) for i in ids])
        rep = evaluate_clips(recon, truth, enc.stub_v, structure_embedder, aggregator, ids,
                             stage_hash(L.cfg, "evaluate"), split_id, trials, seed)
        retr = enc.retrieval(arrays, arrays.test_idx, trials, seed)
        rep.extra.update({"encoder_2way": retr["2way"], "encoder_50way": retr["50way"],
                          "sampler": L.cfg["sampling"]["sampler"], "steps": L.cfg["sampling"]["steps"]})
        if (rec_dir / "recon_shuffled.cbtf").exists():
            shuf = read_tensor_file(rec_dir / "recon_shuffled.cbtf")
            p_shuf = np.array([psnr(a, b) for a, b in zip(shuf, truth)])
            rep.extra["psnr_shuffled"] = float(p_shuf.mean())
            rep.extra["psnr_gain_over_shuffled"] = float(np.mean(np.array(rep.per_clip["psnr"]) - p_shuf))
        (d / "report.json").write_text(rep.to_json())
        (d / "report.csv").write_text(rep.to_csv())
        return {k: rep.aggregate[k] for k in ("video_2way", "psnr", "ssim", "fvd")}

    cpu, info = _timed(score)
    L.finish("evaluate", cpu, **info)
    return MetricReport.from_json((d / "report.json").read_text())
