"""Proactive protection of reference audio against diffusion-based voice cloning."""

from .audio import Waveform, ingest
from .config import ExperimentConfig
from .losses import LossBreakdown, LossWeights
from .mel import MelSpectrogram, mel_spectrogram
from .metrics import DecisionThresholds, SampleMetrics
from .pgd import AdversarialState, PgdConfig, protect, random_noise_baseline
from .vc import VoiceConverter, train_score

__version__ = "0.1.0"

__all__ = [
    "AdversarialState",
    "DecisionThresholds",
    "ExperimentConfig",
    "LossBreakdown",
    "LossWeights",
    "MelSpectrogram",
    "PgdConfig",
    "SampleMetrics",
    "VoiceConverter",
    "Waveform",
    "ingest",
    "mel_spectrogram",
    "protect",
    "random_noise_baseline",
    "train_score",
    "__version__",
]
