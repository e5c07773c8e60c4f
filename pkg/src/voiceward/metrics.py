"""Evaluation metric suite and the composite defense-success decision.

Covers: time-warped spectrogram distance (cityblock cost), local SSIM over
normalized log-dB spectrograms, signal-to-noise ratio of the perturbation,
mel-cepstral distortion over warped frames, and the defense success rate
(verification failure AND quality below threshold). PESQ is intentionally
reported as not implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fftpack import dct

from .audio import Waveform
from .mel import MelSpectrogram, mel_spectrogram, stft_magnitude

PESQ_PLACEHOLDER = "not implemented"


class MetricError(ValueError):
    """Inputs unusable for the requested metric."""


@dataclass(frozen=True)
class SsimParams:
    c1: float = (0.01 * 1.0) ** 2  # inputs normalized to [0, 1], so L = 1
    c2: float = (0.03 * 1.0) ** 2
    window: int = 7

    def __post_init__(self) -> None:
        if self.c1 <= 0 or self.c2 <= 0:
            raise MetricError("SSIM stabilizing constants must be positive")
        if self.window < 1:
            raise MetricError("SSIM window must be >= 1")


@dataclass(frozen=True)
class DecisionThresholds:
    tau_asv: float = 0.25
    tau_q: float = 3.0

    def __post_init__(self) -> None:
        if not 1.0 <= self.tau_q <= 5.0:
            raise MetricError(f"tau_q {self.tau_q} outside quality range [1, 5]")


# ---- dynamic time warping ------------------------------------------------------


def dtw_distance(
    mel_a: np.ndarray | MelSpectrogram,
    mel_b: np.ndarray | MelSpectrogram,
    normalize: str = "path",
) -> float:
    """Optimal cityblock warping cost between two spectrograms.

    Exact full dynamic program; ``normalize="path"`` divides the cumulative
    cost by the warping-path length, ``"none"`` returns the raw cost.
    """
    a = mel_a.frames if isinstance(mel_a, MelSpectrogram) else np.asarray(mel_a, dtype=np.float64)
    b = mel_b.frames if isinstance(mel_b, MelSpectrogram) else np.asarray(mel_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise MetricError("dtw expects [frames, features] matrices")
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise MetricError("dtw inputs must be nonempty")
    if normalize not in ("path", "none"):
        raise MetricError(f"unknown normalize mode {normalize!r}")

    n, m = a.shape[0], b.shape[0]
    # cityblock frame-pair costs, [n, m]
    cost = np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        prev = acc[i - 1]
        row = acc[i]
        for j in range(1, m):
            row[j] = cost[i, j] + min(prev[j], prev[j - 1], row[j - 1])

    total = acc[n - 1, m - 1]
    if normalize == "none":
        return float(total)
    # backtrack the optimal path; diagonal preferred on ties
    i, j, length = n - 1, m - 1, 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            choices = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            move = int(np.argmin(choices))
            if move == 0:
                i, j = i - 1, j - 1
            elif move == 1:
                i -= 1
            else:
                j -= 1
        length += 1
    return float(total / length)


# ---- spectrogram SSIM ----------------------------------------------------------


def _normalized_log_spectrogram(w: Waveform) -> np.ndarray:
    mag = stft_magnitude(w.samples)
    log_db = 20.0 * np.log10(np.maximum(mag, 1e-10))
    lo, hi = log_db.min(), log_db.max()
    if hi == lo:
        return np.zeros_like(log_db)
    return (log_db - lo) / (hi - lo)


def ssim_map(u: np.ndarray, v: np.ndarray, params: SsimParams) -> np.ndarray:
    """Local SSIM over all full windows (population statistics)."""
    w = params.window
    if u.shape != v.shape:
        raise MetricError(f"shape mismatch: {u.shape} vs {v.shape}")
    if u.shape[0] < w or u.shape[1] < w:
        raise MetricError(f"input {u.shape} smaller than one {w}x{w} window")
    from numpy.lib.stride_tricks import sliding_window_view

    wu = sliding_window_view(u, (w, w))
    wv = sliding_window_view(v, (w, w))
    mu_u = wu.mean(axis=(2, 3))
    mu_v = wv.mean(axis=(2, 3))
    var_u = (wu**2).mean(axis=(2, 3)) - mu_u**2
    var_v = (wv**2).mean(axis=(2, 3)) - mu_v**2
    cov = (wu * wv).mean(axis=(2, 3)) - mu_u * mu_v
    c1, c2 = params.c1, params.c2
    return ((2 * mu_u * mu_v + c1) * (2 * cov + c2)) / (
        (mu_u**2 + mu_v**2 + c1) * (var_u + var_v + c2)
    )


def spectrogram_ssim(y: Waveform, y_adv: Waveform, params: SsimParams = SsimParams()) -> float:
    """Mean local SSIM between normalized log-dB spectrograms of two signals."""
    u = _normalized_log_spectrogram(y)
    v = _normalized_log_spectrogram(y_adv)
    frames = min(u.shape[0], v.shape[0])
    return float(ssim_map(u[:frames], v[:frames], params).mean())


# ---- SNR -----------------------------------------------------------------------


def snr_db(x_ref: Waveform | np.ndarray, x_adv: Waveform | np.ndarray) -> float:
    """10*log10(signal power / perturbation power); +inf when unperturbed."""
    ref = x_ref.samples if isinstance(x_ref, Waveform) else np.asarray(x_ref, dtype=np.float64)
    adv = x_adv.samples if isinstance(x_adv, Waveform) else np.asarray(x_adv, dtype=np.float64)
    if ref.shape != adv.shape:
        raise MetricError(f"length mismatch: {ref.shape} vs {adv.shape}")
    delta = adv - ref
    noise_power = float(np.sum(delta**2))
    if noise_power == 0.0:
        return math.inf  # reported downstream as "clean"
    return float(10.0 * np.log10(np.sum(ref**2) / noise_power))


# ---- MCD -----------------------------------------------------------------------

MCD_SCALE = 10.0 * math.sqrt(2.0) / math.log(10.0)


def mel_cepstra(w: Waveform, n_coeffs: int = 13) -> np.ndarray:
    """Cepstral coefficients 1..n (0th excluded) from the log-mel spectrogram."""
    logmel = mel_spectrogram(w).frames
    ceps = dct(logmel, type=2, axis=1, norm="ortho")
    return ceps[:, 1 : n_coeffs + 1]


def mcd(y: Waveform, y_adv: Waveform, n_coeffs: int = 13) -> float:
    """Scaled mean cepstral Euclidean distance over DTW-aligned frames."""
    ca = mel_cepstra(y, n_coeffs)
    cb = mel_cepstra(y_adv, n_coeffs)
    if ca.shape[1] != cb.shape[1]:
        raise MetricError("cepstral order mismatch")
    path = _dtw_path(ca, cb)
    dists = [float(np.linalg.norm(ca[i] - cb[j])) for i, j in path]
    return MCD_SCALE * float(np.mean(dists))


def _dtw_path(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    """Optimal Euclidean-cost alignment path between two feature sequences."""
    n, m = a.shape[0], b.shape[0]
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        prev, row = acc[i - 1], acc[i]
        for j in range(1, m):
            row[j] = cost[i, j] + min(prev[j], prev[j - 1], row[j - 1])
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            move = int(np.argmin((acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])))
            if move == 0:
                i, j = i - 1, j - 1
            elif move == 1:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path


# ---- defense success rate ------------------------------------------------------


@dataclass
class SampleMetrics:
    sample_id: str
    asv_score: float
    quality: float
    dtw: float = float("nan")
    ssim: float = float("nan")
    mcd: float = float("nan")
    snr: float = float("nan")
    success: bool = False
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def _clean(x: float):
            return "clean" if isinstance(x, float) and math.isinf(x) else x

        return {
            "sample_id": self.sample_id,
            "asv_score": self.asv_score,
            "quality": self.quality,
            "dtw": self.dtw,
            "ssim": self.ssim,
            "mcd": self.mcd,
            "snr": _clean(self.snr),
            "pesq": PESQ_PLACEHOLDER,
            "success": self.success,
            **({"notes": self.notes} if self.notes else {}),
        }


def defense_success(asv_score: float, quality: float, thresholds: DecisionThresholds) -> bool:
    """Success iff the clone fails verification AND falls below the quality bar."""
    return asv_score < thresholds.tau_asv and quality < thresholds.tau_q


def dsr(samples: list[SampleMetrics], thresholds: DecisionThresholds) -> float:
    """Fraction of samples with a successful defense decision."""
    if not samples:
        raise MetricError("cannot compute a success rate over zero samples")
    wins = sum(defense_success(s.asv_score, s.quality, thresholds) for s in samples)
    return wins / len(samples)


def asv_acceptance_rate(samples: list[SampleMetrics], thresholds: DecisionThresholds) -> float:
    if not samples:
        raise MetricError("cannot compute an acceptance rate over zero samples")
    return sum(s.asv_score >= thresholds.tau_asv for s in samples) / len(samples)
