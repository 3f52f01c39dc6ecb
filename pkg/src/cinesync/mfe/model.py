"""Fusion encoder variants, the fusion projector and the temporal aggregator."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..numcore import nn
from ..numcore import tensor as T
from ..numcore.rng import stream
from ..numcore.tensor import Tensor
from .config import EncoderConfig, EncoderConfigError
from .tokenize import EEGTokenizer, FMRITokenizer


@dataclass
class BrainEmbeddings:
    z_f: Tensor | None      # (B, tokens, width)
    z_e: Tensor | None
    c_f: Tensor | None      # (B, embed_dim), unit norm
    c_e: Tensor | None


class Stack(nn.Module):
    def __init__(self, n: int, d: int, heads: int, hidden: int, rng, cross: bool = False):
        super().__init__()
        self.blocks = nn.ModuleList(nn.TransformerBlock(d, heads, hidden, rng, cross=cross) for _ in range(n))

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x


def _tile(token: Tensor, batch: int) -> Tensor:
    """Broadcast a (1, 1, d) learned token to (batch, 1, d) keeping its gradient path."""
    return token + np.zeros((batch, 1, token.shape[-1]), dtype=token.dtype)


class FusionEncoder(nn.Module):
    """Brain encoder for one of the five fusion layouts (or a single modality).

    ``encode`` maps an fMRI batch (B, 5, V) and an EEG batch (B, C, T) to
    token sequences and unit class embeddings; ``fuse`` turns those into the
    decoder condition z_b of shape (B, token_count, hidden_dim).
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        hidden = cfg.mlp_hidden if cfg.mlp_hidden is not None else solve_mlp_hidden(cfg)
        self.mlp_hidden = hidden
        rng = stream(cfg.seed, "mfe", cfg.variant, cfg.modalities, cfg.n_f, cfg.n_e)
        d, L, H, n = cfg.hidden_dim, cfg.layers, cfg.heads, cfg.token_count
        use_f = cfg.modalities in ("both", "fmri")
        use_e = cfg.modalities in ("both", "eeg")
        v = cfg.variant
        w = 2 * d if v == "SpatialCat" else d
        nf, ne = cfg.spatial_split if v == "SpatialCat" else (n, n)
        self.width = w
        if use_f:
            self.tok_f = FMRITokenizer(cfg.V, cfg.fmri_frames, nf, w, rng)
            self.cls_f = nn.param(rng.normal(0.0, 0.02, (1, 1, w)))
            self.ln_f = nn.LayerNorm(w)
            self.head_f = nn.Linear(w, cfg.embed_dim, rng)
        if use_e:
            self.tok_e = EEGTokenizer(cfg.eeg_channels, cfg.eeg_samples, ne, w, rng)
            self.cls_e = nn.param(rng.normal(0.0, 0.02, (1, 1, w)))
            self.ln_e = nn.LayerNorm(w)
            self.head_e = nn.Linear(w, cfg.embed_dim, rng)
        if v == "DualFusion":
            if use_f:
                self.stack_f = Stack(L, d, H, hidden, rng)
            if use_e:
                self.stack_e = Stack(L, d, H, hidden, rng)
        elif v == "Joint":
            self.stack = Stack(2 * L, d, H, hidden, rng)
        elif v == "TwoStage":
            self.stack_f = Stack(L // 2, d, H, hidden, rng)
            self.stack_e = Stack(L // 2, d, H, hidden, rng)
            self.stack = Stack(L, d, H, hidden, rng)
        elif v == "CrossAttn":
            self.stack_f = Stack(L, d, H, hidden, rng, cross=True)
            self.stack_e = Stack(L, d, H, hidden, rng, cross=True)
        elif v == "SpatialCat":
            self.stack = Stack(L // 2, w, H, hidden, rng)
        # psi: tokenwise perceptron producing the decoder condition
        d_in = d if cfg.modalities != "both" else 2 * d
        self.psi = nn.MLP(d_in, d_in, d, rng)
        self.temperature = nn.param(np.float32(0.07))

    # ------------------------------------------------------------------ encode
    def _class(self, x: Tensor, ln: nn.LayerNorm, head: nn.Linear) -> Tensor:
        return T.l2_normalize(head(ln(x)), axis=-1)

    def encode(self, x_f=None, x_e=None) -> BrainEmbeddings:
        v, m = self.cfg.variant, self.cfg.modalities
        if m == "fmri":
            x_e = None
        if m == "eeg":
            x_f = None
        if (m in ("both", "fmri") and x_f is None) or (m in ("both", "eeg") and x_e is None):
            raise EncoderConfigError(f"encoder with modalities={m!r} needs both of its inputs")
        B = len(x_f) if x_f is not None else len(x_e)
        tf = T.concat([_tile(self.cls_f, B), self.tok_f(x_f)], axis=1) if x_f is not None else None
        te = T.concat([_tile(self.cls_e, B), self.tok_e(x_e)], axis=1) if x_e is not None else None

        if v == "DualFusion":
            hf = self.stack_f(tf) if tf is not None else None
            he = self.stack_e(te) if te is not None else None
        elif v in ("Joint", "TwoStage"):
            if v == "TwoStage":
                tf, te = self.stack_f(tf), self.stack_e(te)
            nf = tf.shape[1]
            h = self.stack(T.concat([tf, te], axis=1))
            hf, he = h[:, :nf], h[:, nf:]
        elif v == "CrossAttn":
            for bf, be in zip(self.stack_f.blocks, self.stack_e.blocks):
                tf, te = bf(tf, context=te), be(te, context=tf)
            hf, he = tf, te
        else:  # SpatialCat: both class tokens lead the shared stream
            nf = tf.shape[1] - 1
            seq = T.concat([tf[:, :1], te[:, :1], tf[:, 1:], te[:, 1:]], axis=1)
            h = self.stack(seq)
            hf = T.concat([h[:, :1], h[:, 2:2 + nf]], axis=1)
            he = T.concat([h[:, 1:2], h[:, 2 + nf:]], axis=1)

        c_f = self._class(hf[:, 0], self.ln_f, self.head_f) if hf is not None else None
        c_e = self._class(he[:, 0], self.ln_e, self.head_e) if he is not None else None
        return BrainEmbeddings(hf[:, 1:] if hf is not None else None,
                               he[:, 1:] if he is not None else None, c_f, c_e)

    # -------------------------------------------------------------------- fuse
    def fuse(self, emb: BrainEmbeddings) -> Tensor:
        if self.cfg.modalities == "fmri":
            return self.psi(emb.z_f)
        if self.cfg.modalities == "eeg":
            return self.psi(emb.z_e)
        if self.cfg.variant == "SpatialCat":
            # tokens of both modalities at width 2d, concatenated along the token axis
            return self.psi(T.concat([emb.z_f, emb.z_e], axis=1))
        return fuse(emb.z_f, emb.z_e, self.psi)

    def query(self, emb: BrainEmbeddings) -> Tensor:
        """Retrieval embedding: the normalized sum of available class embeddings."""
        parts = [c for c in (emb.c_f, emb.c_e) if c is not None]
        return parts[0] if len(parts) == 1 else T.l2_normalize(parts[0] + parts[1], axis=-1)

    def tau(self) -> Tensor:
        return T.clip(self.temperature, 0.01, 1.0)


def fuse(z_f: Tensor, z_e: Tensor, psi: nn.MLP) -> Tensor:
    """Position-aligned token pairs, concatenated along features, through psi."""
    if z_f.shape != z_e.shape:
        raise T.ShapeError(f"fuse needs matching token shapes, got {z_f.shape} and {z_e.shape}")
    return psi(T.concat([z_f, z_e], axis=-1))


class TemporalAggregator(nn.Module):
    """One transformer layer over frame embeddings with a learned query token."""

    def __init__(self, embed_dim: int, heads: int = 4, max_frames: int = 64, seed: int = 0):
        super().__init__()
        rng = stream(seed, "phi")
        self.query = nn.param(rng.normal(0.0, 0.02, (1, 1, embed_dim)))
        self.pos = nn.param(rng.normal(0.0, 0.02, (max_frames, embed_dim)))
        self.block = nn.TransformerBlock(embed_dim, heads, 2 * embed_dim, rng)
        self.ln = nn.LayerNorm(embed_dim)
        self.out = nn.Linear(embed_dim, embed_dim, rng)

    def forward(self, frames) -> Tensor:
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float32))
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        B, n, _ = x.shape
        if n == 0:
            raise ValueError("aggregate_video needs at least one frame embedding")
        if n > self.pos.shape[0]:
            raise ValueError(f"{n} frames exceed the aggregator's {self.pos.shape[0]} positions")
        seq = T.concat([_tile(self.query, B), x + self.pos[:n]], axis=1)
        c = T.l2_normalize(self.out(self.ln(self.block(seq)[:, 0])), axis=-1)
        return c[0] if single else c


def aggregate_video(frame_embeddings, phi: TemporalAggregator) -> Tensor:
    return phi(frame_embeddings)


@lru_cache(maxsize=64)
def _count(cfg: EncoderConfig, hidden: int) -> int:
    return FusionEncoder(cfg.replace(mlp_hidden=hidden)).num_parameters()


def solve_mlp_hidden(cfg: EncoderConfig) -> int:
    """Feed-forward width giving the same parameter count as DualFusion at this config.

    The count is linear in the width, so two probes determine it.
    """
    base = cfg.replace(variant="DualFusion", n_f=0, n_e=0, mlp_hidden=cfg.default_hidden)
    if cfg.variant == "DualFusion" or cfg.modalities != "both":
        return cfg.default_hidden
    target = _count(base, cfg.default_hidden)
    probe = cfg.replace(mlp_hidden=None)
    p1, p2 = _count(probe, 16), _count(probe, 32)
    slope = (p2 - p1) / 16
    return max(8, int(round(16 + (target - p1) / slope)))


def parameter_budget(cfg: EncoderConfig) -> int:
    return FusionEncoder(cfg).num_parameters()
