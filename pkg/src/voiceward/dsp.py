"""Shared signal-degradation primitives (noise injection, filtering, quantization)."""

from __future__ import annotations

import numpy as np
from scipy import signal


class DspError(ValueError):
    """Invalid filter or degradation parameters."""


def add_noise_at_snr(samples: np.ndarray, snr_target_db: float, rng: np.random.Generator) -> np.ndarray:
    """Additive white noise scaled so the measured SNR equals the target exactly."""
    samples = np.asarray(samples, dtype=np.float64)
    noise = rng.standard_normal(len(samples))
    signal_power = float(np.sum(samples**2))
    if signal_power == 0.0:
        return samples.copy()
    scale = np.sqrt(signal_power / (10.0 ** (snr_target_db / 10.0) * np.sum(noise**2)))
    return samples + scale * noise


_FIR_CACHE: dict[tuple[float, int], np.ndarray] = {}


def lowpass_filter(samples: np.ndarray, cutoff_hz: float, sample_rate: int) -> np.ndarray:
    """Linear-phase FIR low pass; stopband (>= 50 dB down) starts at the cutoff.

    The design edge sits at 0.9x the nominal cutoff so the transition band
    ends below it, guaranteeing >= 40 dB attenuation at and above the
    nominal frequency. Output length equals input length.
    """
    if not 0 < cutoff_hz < sample_rate / 2:
        raise DspError(f"cutoff {cutoff_hz} Hz outside (0, Nyquist) at {sample_rate} Hz")
    key = (cutoff_hz, sample_rate)
    if key not in _FIR_CACHE:
        _FIR_CACHE[key] = signal.firwin(513, 0.9 * cutoff_hz, fs=sample_rate)
    return np.convolve(np.asarray(samples, dtype=np.float64), _FIR_CACHE[key], mode="same")


def quantize(samples: np.ndarray, bits: int) -> np.ndarray:
    if bits < 2:
        raise DspError(f"need >= 2 quantization bits, got {bits}")
    levels = float(2 ** (bits - 1))
    return np.round(np.asarray(samples, dtype=np.float64) * levels) / levels
