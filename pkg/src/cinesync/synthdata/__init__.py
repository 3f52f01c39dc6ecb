"""Synthetic paired EEG/fMRI/video data and the on-disk tensor format."""
from .cbtf import FormatError, decode, encode, file_sha256, read_tensor_file, write_tensor_file
from .config import COMPLEMENTARY, DESK, FULLSCALE, PRESETS, SynthConfig
from .dataset import (ClipArrays, ManifestError, generate_dataset, load_clips, load_manifest,
                      save_manifest, split_train_test, verify_manifest)
from .generate import EpisodeRun, draw_mixing, synthesize_episode
