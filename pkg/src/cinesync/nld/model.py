"""DiT-lite noise predictor conditioned by token concatenation with z_b."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..numcore import nn
from ..numcore import tensor as T
from ..numcore.rng import stream
from ..numcore.tensor import Tensor
from .codec import PatchCodec
from .lora import adapted_linears, attach
from .schedule import NoiseSchedule, diffusion_coefficients, make_schedule


class DecoderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DiTConfig:
    layers: int = 4
    width: int = 128
    heads: int = 4
    mlp_ratio: int = 4
    time_dim: int = 128
    cond_tokens: int = 32       # must equal the z_b token count
    cond_dim: int = 128         # z_b width
    frames: int = 8
    frame_size: int = 32
    channels: int = 3
    patch: int = 4
    patch_t: int = 8
    subspace_dim: int = 96      # leading principal directions of training latents the network models
    shift_rank: int = 64        # rank of the linear z_b -> prior-mean shift
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    lora_rank: int = 4
    lora_alpha: float = 4.0
    seed: int = 0

    def validate(self) -> "DiTConfig":
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name != "seed" and v <= 0:
                raise DecoderConfigError(f"decoder.{f.name} must be positive, got {v}")
        if self.width % self.heads:
            raise DecoderConfigError(f"decoder width {self.width} not divisible by {self.heads} heads")
        if not self.subspace_dim <= min(self.width, self.latent_dim):
            raise DecoderConfigError(f"decoder.subspace_dim {self.subspace_dim} must be <= width {self.width} "
                                     f"and latent dim {self.latent_dim}")
        return self

    def codec(self) -> PatchCodec:
        return PatchCodec(self.frames, self.frame_size, self.channels, self.patch, self.patch_t, self.seed)

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)

    @property
    def latent_dim(self) -> int:
        return self.patch_t * self.patch ** 2 * self.channels

    @property
    def latent_tokens(self) -> int:
        return (-(-self.frames // self.patch_t)) * (-(-self.frame_size // self.patch)) ** 2

    def replace(self, **kw) -> "DiTConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


DECODER_DESK = DiTConfig()


class DiTLite(nn.Module):
    """[cond tokens | latent tokens] + timestep embedding -> transformer -> eps at latent positions.

    The noise estimate is a closed-form Gaussian baseline plus a learned
    residual. The baseline treats latents as Gaussian with the training mean
    and the principal variances of the training latents; its posterior-mean
    noise estimate is exact for the linear part of the problem, so the
    network only models what the Gaussian misses. The residual lives in the
    span of the leading ``subspace_dim`` principal directions, where the
    network runs at full rank; outside it the baseline alone is used.
    Network inputs are the centered latents in that basis, scaled to unit
    variance at every step.
    """

    def __init__(self, cfg: DiTConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.schedule = cfg.schedule()
        rng = stream(cfg.seed, "dit")
        w = cfg.width
        self.in_proj = nn.Linear(cfg.subspace_dim, w, rng)
        self.pos_x = nn.param(rng.normal(0.0, 0.02, (cfg.latent_tokens, w)))
        # zero-initialized so switching on the condition leaves a warmed-up base unchanged
        self.cond_proj = nn.Linear(cfg.cond_dim, w, rng, std=0.0)
        self.pos_c = nn.param(rng.normal(0.0, 0.02, (cfg.cond_tokens, w)))
        # pooled condition: all of z_b, flattened, joins the timestep embedding
        self.cond_pool = nn.Linear(cfg.cond_tokens * cfg.cond_dim, w, rng, std=0.0)
        # low-rank linear map from z_b to a shift of the prior mean (subspace coordinates)
        self.shift_in = nn.Linear(cfg.cond_tokens * cfg.cond_dim, cfg.shift_rank, rng, bias=False)
        self.shift_out = nn.Linear(cfg.shift_rank, cfg.latent_tokens * cfg.subspace_dim, rng, std=0.0)
        self.time1 = nn.Linear(cfg.time_dim, w, rng)
        self.time2 = nn.Linear(w, w, rng)
        self.blocks = nn.ModuleList(nn.TransformerBlock(w, cfg.heads, cfg.mlp_ratio * w, rng)
                                    for _ in range(cfg.layers))
        self.ln_out = nn.LayerNorm(w)
        self.out_proj = nn.Linear(w, cfg.subspace_dim, rng, std=0.0)
        # latent statistics, fitted by fit_prior (non-trainable, saved with the weights)
        k = cfg.subspace_dim
        self.prior_mean = Tensor(np.zeros((cfg.latent_tokens, cfg.latent_dim)), dtype=np.float32)
        self.basis = Tensor(np.eye(cfg.latent_dim, k), dtype=np.float32)
        self.prior_var = Tensor(np.ones(k), dtype=np.float32)
        self.tail_var = Tensor(np.zeros(1), dtype=np.float32)
        self.adapters: list = []

    def fit_prior(self, x0: np.ndarray) -> None:
        """Per-position mean and shared principal directions of (n, tokens, dim) training latents."""
        x0 = np.asarray(x0, np.float64)
        mu = x0.mean(0)
        z = (x0 - mu).reshape(-1, self.cfg.latent_dim)
        w, v = np.linalg.eigh(z.T @ z / len(z))
        w, v = np.maximum(w[::-1], 0.0), v[:, ::-1]
        k = self.cfg.subspace_dim
        self.prior_mean.data[...] = mu
        self.basis.data[...] = v[:, :k]
        self.prior_var.data[...] = w[:k]
        self.tail_var.data[...] = w[k:].mean() if k < len(w) else 0.0

    # ------------------------------------------------------------- LoRA phase
    def add_lora(self) -> list:
        """Attach adapters to every attention and feed-forward projection and freeze the base."""
        if self.adapters:
            return self.adapters
        rng = stream(self.cfg.seed, "lora")
        for blk in self.blocks:
            blk.freeze()
        self.adapters = [attach(lin, self.cfg.lora_rank, self.cfg.lora_alpha, rng)
                         for lin in adapted_linears(self.blocks)]
        return self.adapters

    def base_parameters(self) -> dict:
        """Pretrained-base weights (blocks without adapters) by name."""
        return {k: p for k, p in self.blocks.named_parameters() if ".adapter." not in k}

    # ---------------------------------------------------------------- forward
    def time_embedding(self, t) -> Tensor:
        e = nn.sinusoidal_embedding(t, self.cfg.time_dim).astype(T.DEFAULT_DTYPE)
        return self.time2(T.silu(self.time1(Tensor(e))))

    def forward(self, x_t, z_b, t) -> Tensor:
        """Noise estimate for x_t at integer steps t (scalar or one per row)."""
        return self.predict(x_t, z_b, t)[0]

    def predict(self, x_t, z_b, t) -> tuple[Tensor, Tensor]:
        """(eps_hat, x0_hat), x0_hat from the forward identity."""
        x = T.as_tensor(x_t, T.DEFAULT_DTYPE)
        B, N, D = x.shape
        if (N, D) != (self.cfg.latent_tokens, self.cfg.latent_dim):
            raise T.ShapeError(f"latent tokens must be (B, {self.cfg.latent_tokens}, {self.cfg.latent_dim}), "
                               f"got {x.shape}")
        if z_b is None:
            z_b = np.zeros((B, self.cfg.cond_tokens, self.cfg.cond_dim), np.float32)
        z = T.as_tensor(z_b, T.DEFAULT_DTYPE)
        if z.shape != (B, self.cfg.cond_tokens, self.cfg.cond_dim):
            raise T.ShapeError(f"z_b must be (B, {self.cfg.cond_tokens}, {self.cfg.cond_dim}), got {z.shape}")
        t = np.broadcast_to(self.schedule.check_t(t), (B,))
        a, s = (c.reshape(B, 1, 1) for c in diffusion_coefficients(self.schedule.ab(t), np.float64))
        U, lam = self.basis.data.astype(np.float64), self.prior_var.data.astype(np.float64)
        r = x.data - a * self.prior_mean.data
        y0 = r @ U
        rest = r - y0 @ U.T
        tot = a * a * lam + s * s                   # marginal variance of y per direction
        zf = z.reshape(B, -1)
        shift = self.shift_out(self.shift_in(zf)).reshape(B, N, self.cfg.subspace_dim)
        y = Tensor(y0, dtype=T.DEFAULT_DTYPE) - shift * Tensor(a, dtype=T.DEFAULT_DTYPE)
        base = (y * Tensor(s / tot, dtype=T.DEFAULT_DTYPE)) @ self.basis.T + \
            (rest * (s / (a * a * float(self.tail_var.data[0]) + s * s))).astype(np.float32)

        temb = (self.time_embedding(t) + self.cond_pool(zf)).reshape(B, 1, self.cfg.width)
        xs = y * Tensor(1.0 / np.sqrt(tot), dtype=T.DEFAULT_DTYPE)
        seq = T.concat([self.cond_proj(z) + self.pos_c, self.in_proj(xs) + self.pos_x], axis=1) + temb
        for blk in self.blocks:
            seq = blk(seq)
        # posterior std of eps per direction: unit-scale targets for the head at every t
        c_out = Tensor(a * np.sqrt(lam) / np.sqrt(tot), dtype=T.DEFAULT_DTYPE)
        resid = (self.out_proj(self.ln_out(seq[:, self.cfg.cond_tokens:])) * c_out) @ self.basis.T
        eps = resid + base
        a32, s32 = a.astype(np.float32), s.astype(np.float32)
        return eps, (x - eps * s32) * (1.0 / a32)
