"""Symmetric InfoNCE and the five-pair alignment objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import tensor as T
from ..numcore.tensor import Tensor

TERMS = ("fv", "ft", "ev", "et", "fe")


class LossContractError(ValueError):
    pass


@dataclass(frozen=True)
class LossFlags:
    vision: bool = True     # L_fv, L_ev
    text: bool = True       # L_ft, L_et
    across: bool = True     # L_fe

    def enabled(self, term: str) -> bool:
        if term in ("fv", "ev"):
            return self.vision
        if term in ("ft", "et"):
            return self.text
        return self.across


ALIGNMENT_ABLATIONS = {
    "w/o Vision": LossFlags(vision=False),
    "w/o Text": LossFlags(text=False),
    "w/o Across": LossFlags(across=False),
    "Full": LossFlags(),
}


def _check_unit(x: Tensor, name: str) -> None:
    n = np.linalg.norm(x.data, axis=-1)
    if np.abs(n - 1.0).max() > 1e-3:
        raise LossContractError(f"{name} rows must be unit-normalized (max norm deviation "
                                f"{np.abs(n - 1.0).max():.3g})")


def clip_loss(a: Tensor, b: Tensor, temperature) -> Tensor:
    """0.5 * [CE(a b^T / tau, diag) + CE(b a^T / tau, diag)]."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    _check_unit(a, "a")
    _check_unit(b, "b")
    if a.shape != b.shape or a.ndim != 2 or len(a) < 1:
        raise LossContractError(f"clip_loss needs matching (batch, d) inputs, got {a.shape} and {b.shape}")
    tau = T.as_tensor(temperature, a.dtype)
    if float(tau.data) <= 0:
        raise LossContractError("temperature must be positive")
    logits = (a @ b.T) / tau
    target = np.arange(len(a))
    return (T.cross_entropy(logits, target) + T.cross_entropy(logits.T, target)) * 0.5


def total_contrastive_loss(c_f, c_e, c_v, c_t, temperature, flags: LossFlags = LossFlags()):
    """Sum of the enabled pairwise terms and a per-term breakdown (floats; 0.0 when off).

    Terms whose brain embedding is missing (single-modality encoders) are
    skipped like disabled ones.
    """
    pairs = {"fv": (c_f, c_v), "ft": (c_f, c_t), "ev": (c_e, c_v), "et": (c_e, c_t), "fe": (c_f, c_e)}
    total, breakdown = None, {}
    for name in TERMS:
        x, y = pairs[name]
        if not flags.enabled(name) or x is None or y is None:
            breakdown[name] = 0.0
            continue
        term = clip_loss(x, y, temperature)
        breakdown[name] = float(term.data)
        total = term if total is None else total + term
    if total is None:
        raise LossContractError("every contrastive term is disabled")
    return total, breakdown
