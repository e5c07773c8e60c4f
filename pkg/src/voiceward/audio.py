"""Waveform I/O, peak normalization, and resampling.

All audio enters the toolkit through :func:`ingest`, which pins the sample
rate (22050 Hz by default) and peak-normalizes into [-1, 1]. Everything
downstream assumes those invariants.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

TARGET_RATE = 22050
PCM16_SCALE = 32767.0


class AudioError(ValueError):
    """Unreadable, empty, or otherwise invalid audio input."""


@dataclass
class Waveform:
    """Mono audio as float64 samples in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def copy(self) -> "Waveform":
        return Waveform(self.samples.copy(), self.sample_rate)


def peak_normalize(samples: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale so the absolute peak is exactly 1. Returns (samples, peak).

    A zero-peak (all silent) input is returned unchanged with a warning,
    since there is nothing meaningful to normalize.
    """
    samples = np.asarray(samples, dtype=np.float64)
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak == 0.0:
        warnings.warn("peak_normalize: silent input left unchanged", stacklevel=2)
        return samples, peak
    return samples / peak, peak


def resample(samples: np.ndarray, orig_rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling at the exact rational rate ratio."""
    if orig_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(target_rate, orig_rate)
    return signal.resample_poly(np.asarray(samples, dtype=np.float64), ratio.numerator, ratio.denominator)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a mono PCM WAV into float64 samples in [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise AudioError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.size == 0:
        raise AudioError(f"{path}: empty audio")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483647.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return samples, int(rate)


def write_wav(path: str | Path, waveform: Waveform) -> None:
    """Write PCM-16 mono. Values outside [-1, 1] are clipped."""
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.round(clipped * PCM16_SCALE).astype(np.int16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), waveform.sample_rate, pcm)


def ingest(path: str | Path, target_rate: int = TARGET_RATE) -> Waveform:
    """Load, resample to ``target_rate``, and peak-normalize a WAV file."""
    samples, rate = read_wav(path)
    samples = resample(samples, rate, target_rate)
    samples, _ = peak_normalize(samples)
    return Waveform(samples, target_rate)


def as_waveform(samples: np.ndarray, sample_rate: int = TARGET_RATE, clamp: bool = True) -> Waveform:
    """Wrap raw samples, optionally clamping into the valid range."""
    samples = np.asarray(samples, dtype=np.float64)
    if clamp:
        samples = np.clip(samples, -1.0, 1.0)
    return Waveform(samples, sample_rate)
