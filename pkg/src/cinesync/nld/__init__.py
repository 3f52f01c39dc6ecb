"""Latent diffusion decoder: patch codec, noise schedule, DiT-lite with LoRA, training, sampling."""
from .codec import PatchCodec
from .lora import LoRAAdapter, LoRAConfigError, adapted_linears, lora_apply, merge_lora, merged_weight
from .model import DECODER_DESK, DecoderConfigError, DiTConfig, DiTLite
from .sample import fused_condition, reconstruct, sample_latents, step_grid
from .schedule import NoiseSchedule, ScheduleError, forward_diffuse, make_schedule, sample_timesteps
from .train import (DecoderBundle, DecoderDiverged, DecoderTrainConfig, diffusion_loss, load_decoder,
                    make_decoder, train_decoder)
