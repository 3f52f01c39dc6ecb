from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic paired dataset.

    Timing follows the recording protocol: one fMRI frame per 0.8 s TR,
    4 s clips (5 TRs) and a 4 s hemodynamic lag. ``eeg_samples`` is the
    per-clip EEG length, so the EEG rate is ``eeg_samples / clip_seconds``.
    """

    n_episodes: int = 10
    clips_per_episode: int = 64
    V: int = 256
    eeg_channels: int = 64
    eeg_samples: int = 512
    frames_per_clip: int = 8
    frame_size: int = 32
    d_s: int = 8
    d_t: int = 8
    n_classes: int = 64
    snr_db: float = 10.0
    powerline_amp: float = 0.5
    ecg_coupling: float = 1.0
    seed: int = 0
    tr_seconds: float = 0.8
    clip_seconds: float = 4.0
    lag_seconds: float = 4.0
    train_episodes: int = 8
    test_episodes: int = 2

    @property
    def eeg_fs(self) -> float:
        return self.eeg_samples / self.clip_seconds

    @property
    def fmri_rate_hz(self) -> float:
        return 1.0 / self.tr_seconds

    @property
    def trs_per_clip(self) -> int:
        return int(round(self.clip_seconds / self.tr_seconds))

    @property
    def lag_frames(self) -> int:
        return int(round(self.lag_seconds * self.fmri_rate_hz))

    @property
    def n_clips(self) -> int:
        return self.n_episodes * self.clips_per_episode

    def validate(self) -> "SynthConfig":
        for name in ("n_episodes", "clips_per_episode", "V", "eeg_channels", "eeg_samples",
                     "frames_per_clip", "frame_size", "d_s", "d_t", "n_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"synth.{name} must be positive, got {getattr(self, name)}")
        bits = math.log2(self.n_classes)
        if bits != int(bits) or bits > self.d_s + self.d_t:
            raise ValueError(f"synth.n_classes must be a power of two <= 2**(d_s+d_t), got {self.n_classes}")
        if self.train_episodes + self.test_episodes != self.n_episodes:
            raise ValueError("synth.train_episodes + synth.test_episodes must equal synth.n_episodes")
        if abs(self.clip_seconds / self.tr_seconds - self.trs_per_clip) > 1e-9:
            raise ValueError("synth.clip_seconds must be a whole number of TRs")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "SynthConfig":
        return replace(self, **kw)


DESK = SynthConfig()

# Paper-scale extents; used for shape checks only.
FULLSCALE = SynthConfig(n_episodes=20, clips_per_episode=270, V=8405, eeg_samples=4000,
                        frames_per_clip=33, train_episodes=18, test_episodes=2)

# Few latent dims per modality and -10 dB SNR, so that neither modality alone
# saturates 2-way retrieval and fusing both has room to help.
COMPLEMENTARY = SynthConfig(d_s=3, d_t=3, snr_db=-10.0, seed=1)

PRESETS = {"desk": DESK, "fullscale-shapes": FULLSCALE, "complementary": COMPLEMENTARY}
