"""Acceptance suite: one PASS/FAIL line per primary criterion, tolerances pinned below.

The training criteria drive the command line on the desk and complementary
presets (about 40 CPU-minutes in total). Set CINESYNC_ACCEPTANCE_OUT to a
directory to keep the artifacts; finished stages are then reused on reruns.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from cinesync.cli.ablate import ALIGNMENT_ROWS, FUSION_ROWS, MODALITY_ROWS
from cinesync.cli.main import run
from cinesync.evalkit import LEGAL, TABLE2_COLUMNS, TABLE3_COLUMNS, frechet_distance, nway_topk, psnr, ssim
from cinesync.mfe import ENCODER_FULLSCALE, EEGTokenizer, FMRITokenizer
from cinesync.nld import LoRAAdapter, forward_diffuse, lora_apply, make_schedule, merged_weight
from cinesync.nld.lora import attach
from cinesync.numcore import nn
from cinesync.numcore import tensor as T
from cinesync.numcore.gradcheck import check_gradients
from cinesync.numcore.rng import stream
from cinesync.numcore.tensor import Tensor
from cinesync.preproc import (RawEEGRun, bandpass_filter, epoch_align, n_clip_windows, notch_filter,
                              qrs_artifact_removal, tone_amplitude)
from cinesync.preproc.pipeline import RawFMRIRun
from cinesync.synthdata import FULLSCALE, read_tensor_file, split_train_test, write_tensor_file
from cinesync.synthdata.generate import synth_ecg

# pinned tolerances
GRAD_REL_ERR = 1e-5
SUITE_CPU_S = 120.0
LORA_MERGE_ATOL = 1e-5
NOTCH_DB, PASSBAND_DB, DC_DB, STOP80_DB = 30.0, 1.0, -40.0, 30.0
QRS_POWER_CUT, QRS_NEURAL_CORR = 0.5, 0.95
PSNR_HALF, PSNR_TOL = 6.0206, 1e-3
FRECHET_REL = 0.05
CHANCE_2WAY, CHANCE_2WAY_TOL = 0.5, 0.02
CHANCE_50WAY, CHANCE_50WAY_TOL = 0.02, 0.01
LEARN_2WAY, LEARN_50WAY, LEARN_CPU_S = 0.95, 0.50, 600.0
FUSION_MARGIN = 0.02
PSNR_GAIN_DB, MIN_PAIRED_CLIPS = 1.0, 64
GUARD_MARGIN = 0.02
BATTERY_CPU_S = 3600.0

RESULTS = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _out_root(tmp_path_factory) -> Path:
    env = os.environ.get("CINESYNC_ACCEPTANCE_OUT")
    return Path(env) if env else tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    return _out_root(tmp_path_factory)


@pytest.fixture(scope="module")
def desk(out_root):
    out = out_root / "desk"
    assert run(["pipeline", "--config", "desk", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def battery(out_root):
    """The three harnesses in one fresh output root; CPU time recorded on first computation."""
    out = out_root / "battery"
    stamp = out / "battery_cpu.json"
    if stamp.exists():
        cpu = json.loads(stamp.read_text())["cpu_s"]
    else:
        t0 = time.process_time()
        for cmd, cfg in (("ablate-fusion", "complementary"), ("ablate-alignment", "desk"),
                         ("modality-compare", "complementary")):
            assert run([cmd, "--config", cfg, "--out", str(out)]) == 0
        cpu = time.process_time() - t0
        stamp.write_text(json.dumps({"cpu_s": cpu}))
    tables = {cmd: json.loads(next(out.glob(f"*/{cmd}/table.json")).read_text())
              for cmd in ("ablate-fusion", "ablate-alignment", "modality-compare")}
    return tables, cpu


def _stage(out: Path, stage: str) -> dict:
    (m,) = out.glob(f"*/{stage}/stage.json")
    return json.loads(m.read_text())


# ------------------------------------------------------------------ gradients
def test_gradient_correctness():
    from test_gradients import BINARY, UNARY, leaf, scalarize, test_random_four_layer_composite

    t0 = time.process_time()
    worst = 0.0
    for name, fn in UNARY.items():
        x = leaf((3, 4), 0, lo=0.05)
        if name == "clip":
            x.data[np.abs(np.abs(x.data) - 0.5) < 0.05] += 0.1
        worst = max(worst, check_gradients(scalarize(lambda: fn(x)), [x], h=1e-6))
    for name, (fn, sa, sb) in BINARY.items():
        a, b = leaf(sa, 1), leaf(sb, 2)
        worst = max(worst, check_gradients(scalarize(lambda: fn(a, b)), [a, b], h=1e-6))
    x, g, b = leaf((3, 5), 3), leaf((5,), 4), leaf((5,), 5)
    worst = max(worst, check_gradients(scalarize(lambda: T.layer_norm(x, g, b)), [x, g, b], h=1e-6))
    logits = leaf((4, 6), 6)
    worst = max(worst, check_gradients(lambda: T.cross_entropy(logits, np.array([0, 5, 2, 2])), [logits], h=1e-6))
    test_random_four_layer_composite()          # asserts its own < 1e-5 bound
    cpu = time.process_time() - t0
    n = len(UNARY) + len(BINARY) + 3
    record("gradient correctness", worst < GRAD_REL_ERR and cpu < SUITE_CPU_S,
           f"{n} checks, max rel err {worst:.2e} (< {GRAD_REL_ERR:g}), {cpu:.1f} CPU-s (< {SUITE_CPU_S:g})")


# --------------------------------------------------------------------- shapes
def test_shape_fidelity():
    cfg = ENCODER_FULLSCALE
    f_tok = FMRITokenizer(cfg.V, 5, cfg.token_count, 4, stream(0, "acc"))
    e_tok = EEGTokenizer(64, cfg.eeg_samples, cfg.token_count, 4, stream(0, "acc"))
    fp = f_tok.patches(np.zeros((1, FULLSCALE.trs_per_clip, FULLSCALE.V), np.float32)).shape
    ep = e_tok.patches(np.zeros((1, FULLSCALE.eeg_channels, FULLSCALE.eeg_samples), np.float32)).shape
    clips_per_run = n_clip_windows(1350, FULLSCALE.trs_per_clip)
    fake = {"episodes": [{"id": e} for e in range(20)],
            "clips": [{"id": e * 270 + k, "episode": e} for e in range(20) for k in range(270)]}
    split = split_train_test(fake, FULLSCALE.train_episodes, FULLSCALE.test_episodes)["split"]
    # one full-length lagged run cut into clips: every clip keeps the 5 x V and 64 x 4000 shapes
    F = 60
    ev = np.round(np.arange(F) * 0.8 * 1000.0).astype(np.int64)
    eeg = RawEEGRun(np.zeros((64, int(F * 800))), np.zeros(int(F * 800)), ev, 1000.0)
    clips, _ = epoch_align(RawFMRIRun(np.zeros((F, 8405))), eeg, lag_frames=5)
    got = {"fmri": (FULLSCALE.trs_per_clip, FULLSCALE.V), "eeg": (FULLSCALE.eeg_channels, FULLSCALE.eeg_samples),
           "tokens": cfg.token_count + 1, "fmri_patches": fp[1], "eeg_patches": ep[1],
           "clips_per_run": clips_per_run, "split": (len(split["train"]), len(split["test"])),
           "clip_fmri": clips[0].fmri.shape, "clip_eeg": clips[0].eeg.shape}
    want = {"fmri": (5, 8405), "eeg": (64, 4000), "tokens": 227, "fmri_patches": 226, "eeg_patches": 226,
            "clips_per_run": 270, "split": (4860, 540), "clip_fmri": (5, 8405), "clip_eeg": (64, 4000)}
    bad = {k: got[k] for k in want if got[k] != want[k]}
    record("shape fidelity", not bad, f"fMRI {got['fmri']}, EEG {got['eeg']}, {got['tokens']} tokens, "
           f"{got['clips_per_run']} clips/run, split {got['split']}" + (f"; mismatched {bad}" if bad else ""))


# -------------------------------------------------------------- forward noise
def test_forward_noising_exactness(tmp_path):
    """x_t recomputed from (x0, eps, t) written to and read back from disk equals the original bitwise."""
    s = make_schedule()
    r = np.random.default_rng(2024)
    exact = 0
    for i in range(100):
        x0 = r.normal(size=(4, 64, 384)).astype(np.float32)
        eps = r.normal(size=x0.shape).astype(np.float32)
        t = int(r.integers(1, s.T + 1))
        x_t = forward_diffuse(x0, t, s, eps)
        for name, arr in (("x0", x0), ("eps", eps), ("t", np.array([t], np.float64))):
            write_tensor_file(arr, tmp_path / f"{i}.{name}.cbtf")
        back = {k: read_tensor_file(tmp_path / f"{i}.{k}.cbtf") for k in ("x0", "eps", "t")}
        again = forward_diffuse(back["x0"], int(back["t"][0]), s, back["eps"])
        a = np.float32(np.sqrt(np.float64(s.alpha_bar[t - 1])))
        sd = np.float32(np.sqrt(1.0 - np.float64(s.alpha_bar[t - 1])))
        exact += np.array_equal(again, x_t) and np.array_equal(x_t, a * x0 + sd * eps)
    record("forward noising exactness", exact == 100,
           f"{exact}/100 x_t recomputed from stored (x0, eps, t) bitwise equal")


# ----------------------------------------------------------------------- LoRA
def test_lora_contracts():
    rng = stream(0, "acc-lora")
    lin = nn.Linear(128, 384, rng)
    x = Tensor(rng.normal(size=(5, 128)).astype(np.float32))
    ref = lin(x).data
    fresh_ok = np.array_equal(lora_apply(lin, LoRAAdapter(128, 384, 4, 4.0, rng), x).data, ref)
    worst = 0.0
    for shape in [(128, 128), (128, 384), (384, 128), (128, 512), (512, 128), (8, 3)]:
        lin = nn.Linear(*shape, stream(1, "acc-merge", *shape))
        ad = attach(lin, min(4, *shape), 4.0, stream(2, "acc-merge", *shape))
        ad.B.data[...] = np.random.default_rng(3).normal(0, 0.1, ad.B.shape)
        xi = np.random.default_rng(4).normal(size=(6, shape[0])).astype(np.float32)
        worst = max(worst, float(np.abs(lin(Tensor(xi)).data - (xi @ merged_weight(lin) + lin.bias.data)).max()))
    scale = LoRAAdapter(128, 128, 64, 64.0, stream(0, "acc-r64")).scale
    record("LoRA contracts", fresh_ok and worst <= LORA_MERGE_ATOL and scale == 1.0,
           f"zero-init bitwise {fresh_ok}; merge max |diff| {worst:.1e} (<= {LORA_MERGE_ATOL:g}); "
           f"alpha/r at r=64 = {scale:g}")


# ------------------------------------------------------------- preprocessing
def _sine(f, seconds=10.0, fs=1000.0):
    return np.sin(2 * np.pi * f * np.arange(int(seconds * fs)) / fs)


def _corr(a, b):
    a, b = a - a.mean(-1, keepdims=True), b - b.mean(-1, keepdims=True)
    return (a * b).sum(-1) / np.sqrt((a * a).sum(-1) * (b * b).sum(-1))


def test_preprocessing_attenuation():
    fs, db = 1000.0, lambda r: 20 * np.log10(r)
    t0 = time.process_time()
    notch50 = -db(tone_amplitude(notch_filter(_sine(50), fs), fs, 50))
    notch10 = abs(db(tone_amplitude(notch_filter(_sine(10), fs), fs, 10)))
    dc = bandpass_filter(np.ones(60_000), fs)[20_000:40_000]
    dc_db = 10 * np.log10(np.mean(dc ** 2))
    stop80 = -db(tone_amplitude(bandpass_filter(_sine(80), fs), fs, 80))
    r = stream(0, "acc-qrs")
    N, C = 120_000, 8
    ecg, _, bcg = synth_ecg(N, fs, r)
    neural = bandpass_filter(r.normal(size=(C, N)), fs, 1.0, 30.0)
    neural /= neural.std(axis=1, keepdims=True)
    artifact = r.uniform(0.5, 2.0, C)[:, None] * bcg[None]
    out = qrs_artifact_removal(RawEEGRun(neural + artifact, ecg, np.arange(0, N, 800), fs)).data
    cut = 1 - ((out - neural) ** 2).sum() / (artifact ** 2).sum()
    rho = float(_corr(out, neural).min())
    cpu = time.process_time() - t0
    ok = (notch50 >= NOTCH_DB and notch10 < PASSBAND_DB and dc_db < DC_DB and stop80 >= STOP80_DB
          and cut >= QRS_POWER_CUT and rho >= QRS_NEURAL_CORR and cpu < SUITE_CPU_S)
    record("preprocessing attenuation", ok,
           f"notch 50 Hz -{notch50:.1f} dB (>= {NOTCH_DB:g}), 10 Hz change {notch10:.3f} dB (< {PASSBAND_DB:g}); "
           f"DC {dc_db:.1f} dB (< {DC_DB:g}), 80 Hz -{stop80:.1f} dB (>= {STOP80_DB:g}); QRS power cut "
           f"{cut:.1%} (>= {QRS_POWER_CUT:.0%}), neural corr {rho:.3f} (>= {QRS_NEURAL_CORR}); {cpu:.1f} CPU-s")


# -------------------------------------------------------------------- metrics
def test_metric_oracles():
    p = psnr(np.zeros((8, 8)), np.full((8, 8), 0.5))
    a = np.random.default_rng(0).random((32, 32))
    s = ssim(a, a)
    r = np.random.default_rng(1)
    delta = np.full(8, 0.75)
    fd = frechet_distance(r.normal(size=(10_000, 8)), r.normal(size=(10_000, 8)) + delta)
    want = float(delta @ delta)
    q, g = r.normal(size=(2000, 32)), r.normal(size=(2000, 32))
    two = nway_topk(q, g, 2, 1, 5, np.random.default_rng(2))
    fifty = nway_topk(q, g, 50, 1, 5, np.random.default_rng(3))
    ok = (abs(p - PSNR_HALF) <= PSNR_TOL and s == 1.0 and abs(fd / want - 1) <= FRECHET_REL
          and abs(two - CHANCE_2WAY) <= CHANCE_2WAY_TOL and abs(fifty - CHANCE_50WAY) <= CHANCE_50WAY_TOL)
    record("metric oracles", ok,
           f"PSNR {p:.4f} dB ({PSNR_HALF} +- {PSNR_TOL:g}); SSIM(a,a) {s}; Frechet {fd:.3f} vs {want:.3f} "
           f"(+-{FRECHET_REL:.0%}); random 2-way {two:.4f} ({CHANCE_2WAY} +- {CHANCE_2WAY_TOL}), "
           f"50-way {fifty:.4f} ({CHANCE_50WAY} +- {CHANCE_50WAY_TOL}) over 10^4 query-trials")


# ------------------------------------------------------------ trained models
def test_learning_signal(desk):
    st = _stage(desk, "encoder")
    ok = st["heldout_2way"] >= LEARN_2WAY and st["heldout_50way"] >= LEARN_50WAY and st["cpu_s"] < LEARN_CPU_S
    record("learning signal", ok,
           f"desk held-out 2-way {st['heldout_2way']:.3f} (>= {LEARN_2WAY}), 50-way {st['heldout_50way']:.3f} "
           f"(>= {LEARN_50WAY}), encoder training {st['cpu_s'] / 60:.1f} CPU-min (< {LEARN_CPU_S / 60:g})")


def test_multimodal_benefit(battery):
    rows = battery[0]["modality-compare"]["rows"]
    fused = rows["CineSync"]["encoder_2way"]
    best = max(rows["CineSync-fMRI"]["encoder_2way"], rows["CineSync-EEG"]["encoder_2way"])
    record("multimodal benefit", fused >= best + FUSION_MARGIN,
           f"complementary fused 2-way {fused:.3f} vs best single {best:.3f} "
           f"(fMRI {rows['CineSync-fMRI']['encoder_2way']:.3f}, EEG {rows['CineSync-EEG']['encoder_2way']:.3f}); "
           f"margin {fused - best:+.3f} (>= {FUSION_MARGIN})")


def test_conditional_decoding_signal(desk):
    (rep,) = desk.glob("*/evaluate/report.json")
    body = json.loads(rep.read_text())
    gain, n = body["extra"]["psnr_gain_over_shuffled"], len(body["clip_ids"])
    record("conditional decoding signal", gain >= PSNR_GAIN_DB and n >= MIN_PAIRED_CLIPS,
           f"desk PSNR {body['aggregate']['psnr']:.2f} dB vs shuffled {body['extra']['psnr_shuffled']:.2f} dB, "
           f"paired gain {gain:+.2f} dB (>= {PSNR_GAIN_DB:g}) over {n} clips (>= {MIN_PAIRED_CLIPS})")


def _legal(rows, columns):
    keys = {**TABLE3_COLUMNS, **TABLE2_COLUMNS}
    return all(LEGAL[keys[c]][0] <= r[c] <= LEGAL[keys[c]][1] for r in rows.values() for c in columns)


def test_ablation_harnesses(battery):
    tables, cpu = battery
    fu, al, mo = tables["ablate-fusion"], tables["ablate-alignment"], tables["modality-compare"]
    layout = (list(fu["rows"]) == list(FUSION_ROWS) and fu["columns"] == list(TABLE2_COLUMNS)
              and list(al["rows"]) == list(ALIGNMENT_ROWS) and list(mo["rows"]) == list(MODALITY_ROWS)
              and al["columns"] == mo["columns"] == list(TABLE3_COLUMNS))
    legal = all(_legal(t["rows"], t["columns"]) for t in (fu, al, mo))
    dual = fu["rows"]["DualFusion"]["encoder_2way"] >= fu["rows"]["Joint"]["encoder_2way"] - GUARD_MARGIN
    full = al["rows"]["Full"]["encoder_2way"]
    full_ok = all(full >= al["rows"][n]["encoder_2way"] - GUARD_MARGIN for n in ALIGNMENT_ROWS[1:])
    ok = layout and legal and dual and full_ok and cpu < BATTERY_CPU_S
    record("ablation harnesses", ok,
           f"rows {len(fu['rows'])}/{len(al['rows'])}/{len(mo['rows'])} (7/4/3), legal ranges {legal}; "
           f"DualFusion 2-way {fu['rows']['DualFusion']['encoder_2way']:.3f} vs Joint "
           f"{fu['rows']['Joint']['encoder_2way']:.3f} - {GUARD_MARGIN}; full-loss {full:.3f} vs ablations "
           + "/".join(f"{al['rows'][n]['encoder_2way']:.3f}" for n in ALIGNMENT_ROWS[1:])
           + f" - {GUARD_MARGIN}; battery {cpu / 60:.1f} CPU-min (< {BATTERY_CPU_S / 60:g})")


def test_determinism(desk, tmp_path):
    assert run(["pipeline", "--config", "desk", "--out", str(tmp_path / "again")]) == 0
    (a,) = desk.glob("*/evaluate/report.json")
    (b,) = (tmp_path / "again").glob("*/evaluate/report.json")
    same = a.read_bytes() == b.read_bytes()
    record("determinism", same, f"rerun of pipeline in a fresh directory gives a "
           f"{'bitwise identical' if same else 'different'} MetricReport ({len(a.read_bytes())} bytes)")
