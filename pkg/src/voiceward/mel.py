"""STFT and 80-band log-mel spectrogram pipeline.

Fixed analysis settings: 1024-sample window, 256-sample hop at 22050 Hz,
mel range 0-8000 Hz, log floor 1e-5. Frames are laid out [n_frames, n_mels]
on the numpy side; the torch twin (used wherever gradients must flow back
to the waveform) produces [n_mels, n_frames] channel-first tensors and is
numerically matched to the numpy path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .audio import Waveform

N_MELS = 80
WIN_LENGTH = 1024
HOP_LENGTH = 256
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5


class MelError(ValueError):
    """Input too short or otherwise unusable for spectrogram analysis."""


@dataclass
class MelSpectrogram:
    """Log-amplitude mel frames, [n_frames, n_mels]."""

    frames: np.ndarray
    sample_rate: int
    n_mels: int = N_MELS
    hop_length: int = HOP_LENGTH
    win_length: int = WIN_LENGTH

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.n_mels:
            raise MelError(f"expected [n_frames, {self.n_mels}] frames, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise MelError("non-finite mel entries")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(
    n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX
) -> np.ndarray:
    """Center frequency (Hz) of each triangular mel filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(
    sample_rate: int,
    n_fft: int = WIN_LENGTH,
    n_mels: int = N_MELS,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Triangular filterbank [n_mels, n_fft//2 + 1], unit peak per filter."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def hann_window(length: int = WIN_LENGTH) -> np.ndarray:
    # periodic Hann, matching torch.hann_window(periodic=True)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(length) / length))


def frame_count(n_samples: int, win_length: int = WIN_LENGTH, hop_length: int = HOP_LENGTH) -> int:
    if n_samples < win_length:
        return 0
    return (n_samples - win_length) // hop_length + 1


def stft_magnitude(
    samples: np.ndarray, win_length: int = WIN_LENGTH, hop_length: int = HOP_LENGTH
) -> np.ndarray:
    """|STFT| with no center padding, [n_frames, n_fft//2 + 1]."""
    samples = np.asarray(samples, dtype=np.float64)
    n = frame_count(len(samples), win_length, hop_length)
    if n == 0:
        raise MelError(f"input of {len(samples)} samples shorter than one {win_length}-sample window")
    idx = np.arange(win_length)[None, :] + hop_length * np.arange(n)[:, None]
    frames = samples[idx] * hann_window(win_length)[None, :]
    return np.abs(np.fft.rfft(frames, axis=1))


def mel_spectrogram(waveform: Waveform) -> MelSpectrogram:
    """80-band log-mel of a waveform (log floor 1e-5)."""
    mag = stft_magnitude(waveform.samples)
    fb = _cached_filterbank(waveform.sample_rate)
    mel = mag @ fb.T
    frames = np.log(np.maximum(mel, LOG_FLOOR))
    return MelSpectrogram(frames, waveform.sample_rate)


_FILTERBANKS: dict[int, np.ndarray] = {}


def _cached_filterbank(sample_rate: int) -> np.ndarray:
    if sample_rate not in _FILTERBANKS:
        _FILTERBANKS[sample_rate] = mel_filterbank(sample_rate)
    return _FILTERBANKS[sample_rate]


class TorchMel(torch.nn.Module):
    """Differentiable twin of :func:`mel_spectrogram` for waveform tensors.

    Produces [batch, n_mels, n_frames] float32 tensors so gradients can flow
    from mel-domain losses back to the raw audio samples.
    """

    def __init__(self, sample_rate: int):
        super().__init__()
        self.sample_rate = sample_rate
        self.register_buffer("fb", torch.from_numpy(_cached_filterbank(sample_rate)).float())
        self.register_buffer("window", torch.from_numpy(hann_window()).float())

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        if samples.dim() == 1:
            samples = samples[None, :]
        if samples.shape[-1] < WIN_LENGTH:
            raise MelError("input shorter than one analysis window")
        spec = torch.stft(
            samples,
            n_fft=WIN_LENGTH,
            hop_length=HOP_LENGTH,
            win_length=WIN_LENGTH,
            window=self.window,
            center=False,
            return_complex=True,
        )
        mag = spec.abs()  # [B, bins, frames]
        mel = torch.einsum("mf,bft->bmt", self.fb, mag)
        return torch.log(torch.clamp(mel, min=LOG_FLOOR))


def to_torch_mel_layout(mel: MelSpectrogram) -> torch.Tensor:
    """[n_frames, n_mels] numpy -> [1, n_mels, n_frames] float32 tensor."""
    return torch.from_numpy(mel.frames.T.copy()).float()[None]


def from_torch_mel_layout(frames: torch.Tensor, sample_rate: int) -> MelSpectrogram:
    """[1, n_mels, n_frames] or [n_mels, n_frames] tensor -> MelSpectrogram."""
    if frames.dim() == 3:
        frames = frames[0]
    return MelSpectrogram(frames.detach().cpu().double().numpy().T, sample_rate)
