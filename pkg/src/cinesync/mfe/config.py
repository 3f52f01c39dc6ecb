from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

VARIANTS = ("Joint", "TwoStage", "CrossAttn", "SpatialCat", "DualFusion")
MODALITIES = ("both", "fmri", "eeg")


class EncoderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "DualFusion"
    layers: int = 4
    hidden_dim: int = 128
    heads: int = 4
    token_count: int = 32
    mlp_ratio: float = 4.0
    embed_dim: int = 64
    V: int = 256
    fmri_frames: int = 5
    eeg_channels: int = 64
    eeg_samples: int = 512
    n_f: int = 0                 # SpatialCat token split; 0 means half each
    n_e: int = 0
    modalities: str = "both"
    mlp_hidden: int | None = None   # None: derived from mlp_ratio, or solved to match budgets
    seed: int = 0

    def validate(self) -> "EncoderConfig":
        if self.variant not in VARIANTS:
            raise EncoderConfigError(f"unknown encoder variant {self.variant!r}; expected one of {VARIANTS}")
        if self.modalities not in MODALITIES:
            raise EncoderConfigError(f"unknown modalities {self.modalities!r}")
        if self.modalities != "both" and self.variant != "DualFusion":
            raise EncoderConfigError("single-modality encoders use the DualFusion stack layout")
        for name in ("layers", "hidden_dim", "heads", "token_count", "embed_dim", "V", "eeg_channels",
                     "eeg_samples", "fmri_frames"):
            if getattr(self, name) <= 0:
                raise EncoderConfigError(f"encoder.{name} must be positive")
        if self.hidden_dim % self.heads:
            raise EncoderConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.variant in ("TwoStage", "SpatialCat") and self.layers % 2:
            raise EncoderConfigError(f"{self.variant} needs an even layer count")
        if self.variant == "SpatialCat":
            nf, ne = self.spatial_split
            if nf < 1 or ne < 1 or nf + ne != self.token_count:
                raise EncoderConfigError(f"SpatialCat split {nf}+{ne} must be positive and sum to "
                                         f"{self.token_count}")
        return self

    @property
    def spatial_split(self) -> tuple[int, int]:
        if self.n_f or self.n_e:
            return self.n_f, self.n_e
        return self.token_count // 2, self.token_count - self.token_count // 2

    @property
    def default_hidden(self) -> int:
        return int(round(self.mlp_ratio * self.hidden_dim))

    @property
    def total_tokens(self) -> int:
        """Spatial tokens plus the class token of one modality stream."""
        return self.token_count + 1

    def fmri_chunk(self) -> tuple[int, int]:
        """Voxels per token and zero padding at the end of the voxel axis."""
        c = math.ceil(self.V / self.token_count)
        return c, c * self.token_count - self.V

    def eeg_window(self) -> tuple[int, int]:
        w = math.ceil(self.eeg_samples / self.token_count)
        return w, w * self.token_count - self.eeg_samples

    def replace(self, **kw) -> "EncoderConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


ENCODER_DESK = EncoderConfig()
ENCODER_FULLSCALE = EncoderConfig(layers=12, hidden_dim=2048, heads=16, token_count=226, embed_dim=1024,
                                  V=8405, eeg_samples=4000)

# Token splits of the spatial-concatenation rows, named after the full-scale splits.
SPATIALCAT_FULLSCALE = {"f113-e113": (113, 113), "f34-e192": (34, 192), "f24-e202": (24, 202)}
SPATIALCAT_DESK = {"f113-e113": (16, 16), "f34-e192": (5, 27), "f24-e202": (3, 29)}
