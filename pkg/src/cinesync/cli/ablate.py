"""Comparison harnesses: fusion layouts, alignment terms and single-modality encoders.

Every row is a full pipeline run (encoder, LoRA decoder, reconstruction,
metrics) under ``for_ablation`` settings, so rows share the dataset and the
unconditional decoder base through the stage hashes. Non-inferiority guards
compare held-out brain-to-video retrieval of the encoders, which is what the
rows vary; the reconstruction columns are reported alongside.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..checkpoint import config_hash
from ..evalkit import TABLE2_COLUMNS, TABLE3_COLUMNS, table_csv
from ..mfe import ALIGNMENT_ABLATIONS, SPATIALCAT_DESK, parameter_budget, solve_mlp_hidden
from ..synthdata.dataset import ridge_probe
from .config import ConfigError, build, for_ablation
from .stages import Layout, dataset, encoder_bundle, run_encoder, run_evaluate

log = logging.getLogger(__name__)

GUARD_MARGIN = 0.02
BUDGET_TOLERANCE = 0.10
FUSION_ROWS = ("Joint", "TwoStage", "CrossAttn", "SpatialCat f113-e113", "SpatialCat f34-e192",
               "SpatialCat f24-e202", "DualFusion")
ALIGNMENT_ROWS = ("Full", "w/o Vision", "w/o Text", "w/o Across")
MODALITY_ROWS = {"CineSync": "both", "CineSync-fMRI": "fmri", "CineSync-EEG": "eeg"}


def fusion_encoders(cfg: dict) -> dict:
    """Row name -> encoder section, with MLP widths solved to DualFusion's parameter count."""
    base = build(cfg)["encoder"].replace(variant="DualFusion", modalities="both", n_f=0, n_e=0)
    scale = base.token_count / 32
    rows = {}
    for name in FUSION_ROWS:
        if name == "DualFusion":
            enc = base
        elif name.startswith("SpatialCat"):
            nf, ne = SPATIALCAT_DESK[name.split()[1]]
            nf = max(1, int(round(nf * scale)))
            enc = base.replace(variant="SpatialCat", n_f=nf, n_e=base.token_count - nf)
        else:
            enc = base.replace(variant=name)
        if enc.variant != "DualFusion":
            enc = enc.replace(mlp_hidden=solve_mlp_hidden(enc))
        rows[name] = enc
    want = parameter_budget(base)
    for name, enc in rows.items():
        got = parameter_budget(enc)
        if abs(got - want) > BUDGET_TOLERANCE * want:
            raise ConfigError(f"encoder: {name} has {got} parameters, more than {BUDGET_TOLERANCE:.0%} "
                              f"from DualFusion's {want}")
    return {k: json.loads(json.dumps(v.to_dict())) for k, v in rows.items()}


def _guard(rows: dict, ref: str, others, need: float = -GUARD_MARGIN, key: str = "encoder_2way") -> dict:
    """``ref`` passes when its value is at least the best of ``others`` plus ``need``."""
    best = max(rows[o][key] for o in others)
    return {"metric": key, "row": ref, "value": rows[ref][key], "against": list(others), "best_other": best,
            "need": need, "passed": bool(rows[ref][key] >= best + need)}


def _row(rep, columns: dict, **more) -> dict:
    return {**rep.row(columns), "encoder_2way": rep.extra["encoder_2way"],
            "encoder_50way": rep.extra["encoder_50way"], "report_hash": rep.config_hash, **more}


def _loss_terms(L: Layout) -> dict:
    last = (run_encoder(L) / "train_log.jsonl").read_text().splitlines()[-1]
    return {k[5:]: v for k, v in json.loads(last).items() if k.startswith("loss_") and k != "loss_total"}


def _emit(out: Path, cfg: dict, command: str, rows: dict, columns: dict, guards: list, **more) -> dict:
    d = Path(out) / config_hash(cfg) / command
    d.mkdir(parents=True, exist_ok=True)
    table = {"command": command, "config_hash": config_hash(cfg), "columns": list(columns),
             "rows": rows, "guards": guards, **more}
    (d / "table.json").write_text(json.dumps(table, indent=1))
    (d / "table.csv").write_text(table_csv(rows, columns))
    for g in guards:
        (log.info if g["passed"] else log.warning)("%s guard %s: %s", command, g["row"], g)
    table["dir"] = str(d)
    return table


def ablate_fusion(cfg: dict, out, runlog=None) -> dict:
    rows = {}
    for name, enc in fusion_encoders(cfg).items():
        L = Layout(out, for_ablation(cfg, encoder=enc), runlog)
        L.note("ablate-fusion", row=name, variant=enc["variant"], parameters=parameter_budget(L.objs["encoder"]))
        rows[name] = _row(run_evaluate(L), TABLE2_COLUMNS, parameters=parameter_budget(L.objs["encoder"]))
    guards = [_guard(rows, "DualFusion", ["Joint"])]
    return _emit(out, cfg, "ablate-fusion", rows, TABLE2_COLUMNS, guards)


def ablate_alignment(cfg: dict, out, runlog=None) -> dict:
    rows = {}
    for name in ALIGNMENT_ROWS:
        flags = ALIGNMENT_ABLATIONS[name]
        L = Layout(out, for_ablation(cfg, encoder_train={"flags": flags.__dict__.copy()}), runlog)
        rep = run_evaluate(L)
        rows[name] = _row(rep, TABLE3_COLUMNS, flags=flags.__dict__.copy(), loss_terms=_loss_terms(L))
    guards = [_guard(rows, "Full", [n]) for n in ALIGNMENT_ROWS[1:]]
    return _emit(out, cfg, "ablate-alignment", rows, TABLE3_COLUMNS, guards)


def factor_probes(L: Layout) -> dict:
    """Held-out ridge R^2 from the encoder's retrieval embedding to each latent factor."""
    arrays = dataset(L)
    q = encoder_bundle(L, arrays).encode(arrays)["query"]
    train = np.zeros(len(q), bool)
    train[arrays.train_idx] = True
    return {"spatial_r2": ridge_probe(q, arrays.spatial, train),
            "temporal_r2": ridge_probe(q, arrays.temporal, train)}


# fMRI carries the spatial factors and EEG the temporal ones
OPPOSITE = {"fmri": "temporal_r2", "eeg": "spatial_r2"}
PROBE_CHANCE = 0.1


def modality_compare(cfg: dict, out, runlog=None) -> dict:
    rows = {}
    for name, mod in MODALITY_ROWS.items():
        L = Layout(out, for_ablation(cfg, encoder={"variant": "DualFusion", "modalities": mod, "n_f": 0,
                                                   "n_e": 0}), runlog)
        rows[name] = _row(run_evaluate(L), TABLE3_COLUMNS, modalities=mod, probes=factor_probes(L))
    guards = [_guard(rows, "CineSync", ["CineSync-fMRI", "CineSync-EEG"], need=GUARD_MARGIN)]
    for name, mod in MODALITY_ROWS.items():
        if mod in OPPOSITE:
            r2 = rows[name]["probes"][OPPOSITE[mod]]
            guards.append({"metric": OPPOSITE[mod], "row": name, "value": r2, "chance_below": PROBE_CHANCE,
                           "passed": bool(r2 < PROBE_CHANCE)})
    return _emit(out, cfg, "modality-compare", rows, TABLE3_COLUMNS, guards)
