"""Iterative phase reconstruction from log-mel spectrograms.

Mel frames are inverted to a linear magnitude estimate through the
pseudo-inverse of the mel filterbank, then phase is recovered by iterating
STFT round-trips. Fully deterministic; no learned components.
"""

from __future__ import annotations

import numpy as np

from .audio import Waveform, peak_normalize
from .mel import (
    HOP_LENGTH,
    WIN_LENGTH,
    MelSpectrogram,
    hann_window,
    mel_filterbank,
)

_PINV_CACHE: dict[int, np.ndarray] = {}


def _filterbank_pinv(sample_rate: int) -> np.ndarray:
    if sample_rate not in _PINV_CACHE:
        _PINV_CACHE[sample_rate] = np.linalg.pinv(mel_filterbank(sample_rate))
    return _PINV_CACHE[sample_rate]


def _istft(spec: np.ndarray) -> np.ndarray:
    """Overlap-add inverse of the center=False STFT used by the mel pipeline."""
    n_frames = spec.shape[0]
    window = hann_window(WIN_LENGTH)
    frames = np.fft.irfft(spec, n=WIN_LENGTH, axis=1) * window[None, :]
    length = (n_frames - 1) * HOP_LENGTH + WIN_LENGTH
    out = np.zeros(length)
    wsum = np.zeros(length)
    for i in range(n_frames):
        sl = slice(i * HOP_LENGTH, i * HOP_LENGTH + WIN_LENGTH)
        out[sl] += frames[i]
        wsum[sl] += window**2
    # normalize only where the window power is meaningful; raw edge samples
    # otherwise explode by 1/w and swamp peak normalization downstream
    valid = wsum > 1e-3 * wsum.max()
    out[valid] /= wsum[valid]
    out[~valid] = 0.0
    return out


def _stft_complex(samples: np.ndarray, n_frames: int) -> np.ndarray:
    window = hann_window(WIN_LENGTH)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(n_frames)[:, None]
    return np.fft.rfft(samples[idx] * window[None, :], axis=1)


def mel_to_waveform(mel: MelSpectrogram, n_iters: int = 32) -> Waveform:
    """Griffin-Lim style reconstruction; output is peak-normalized."""
    amp = np.exp(mel.frames)  # [T, n_mels]
    mag = np.clip(amp @ _filterbank_pinv(mel.sample_rate).T, 0.0, None)  # [T, bins]
    spec = mag.astype(np.complex128)
    n_frames = mag.shape[0]
    for _ in range(n_iters):
        x = _istft(spec)
        est = _stft_complex(x, n_frames)
        phase = est / np.maximum(np.abs(est), 1e-12)
        spec = mag * phase
    x = _istft(spec)
    samples, _ = peak_normalize(x)
    return Waveform(samples, mel.sample_rate)
