"""Checkpoint directories: one CBTF file per tensor plus a JSON header."""
from __future__ import annotations

import hashlib
import json
import shutil
from pathlib import Path

import numpy as np

from .synthdata.cbtf import file_sha256, read_tensor_file, write_tensor_file

HEADER = "checkpoint.json"


class CheckpointError(ValueError):
    pass


def config_hash(cfg) -> str:
    """Short stable hash of a JSON-serializable config."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def save_checkpoint(path, modules: dict, meta: dict) -> Path:
    """Write every module's parameters under ``path`` (replacing it atomically)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "tensors").mkdir(parents=True)
    tensors = {}
    for mname, module in modules.items():
        for pname, p in module.named_parameters():
            key = f"{mname}.{pname}"
            rel = f"tensors/{key}.cbtf"
            data = p.data if p.data.ndim else p.data.reshape(1)
            info = write_tensor_file(np.asarray(data), tmp / rel)
            tensors[key] = {"path": rel, "shape": list(p.shape), "sha256": info["sha256"]}
    header = dict(meta, tensors=tensors)
    (tmp / HEADER).write_text(json.dumps(header, indent=1, default=str))
    if path.exists():
        shutil.rmtree(path)
    tmp.rename(path)
    return path


def read_header(path) -> dict:
    f = Path(path) / HEADER
    if not f.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    return json.loads(f.read_text())


def load_checkpoint(path, modules: dict, verify: bool = True) -> dict:
    """Load tensors into ``modules`` in place; returns the header."""
    path = Path(path)
    header = read_header(path)
    tensors = header["tensors"]
    for mname, module in modules.items():
        state = {}
        for pname, p in module.named_parameters():
            key = f"{mname}.{pname}"
            if key not in tensors:
                raise CheckpointError(f"checkpoint {path} lacks tensor {key}")
            ref = tensors[key]
            if verify and file_sha256(path / ref["path"]) != ref["sha256"]:
                raise CheckpointError(f"checksum mismatch for {key} in {path}")
            state[pname] = read_tensor_file(path / ref["path"]).reshape(ref["shape"])
        module.load_state_dict(state)
    return header
