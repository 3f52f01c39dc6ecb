"""Multi-modal fusion encoder: tokenizers, fusion variants, alignment losses, training."""
from .config import (ENCODER_DESK, ENCODER_FULLSCALE, SPATIALCAT_DESK, SPATIALCAT_FULLSCALE, VARIANTS,
                     EncoderConfig, EncoderConfigError)
from .losses import ALIGNMENT_ABLATIONS, LossContractError, LossFlags, clip_loss, total_contrastive_loss
from .model import (BrainEmbeddings, FusionEncoder, TemporalAggregator, aggregate_video, fuse,
                    parameter_budget, solve_mlp_hidden)
from .stubs import StubTextEncoder, StubVideoEncoder, structure_embedder
from .tokenize import EEGTokenizer, FMRITokenizer
from .train import (EncoderBundle, EncoderTrainConfig, TrainingDiverged, heldout_loss, load_encoder,
                    train_encoder)
