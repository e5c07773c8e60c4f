"""Trainable speech-quality proxy scoring audio on a 1-5 opinion scale.

A small mel-domain regressor trained on corpus utterances under a ladder of
programmatic degradations (additive noise, band limiting, quantization,
phase-reconstruction round trips, combinations), each labeled by severity
mapped onto [1, 5]. The sigmoid output head clamps predictions into range
by construction. This is an artifact-local stand-in for a learned MOS
predictor, not a calibrated implementation of one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import Waveform
from . import audio as audio_mod
from .corpus import load_manifest, manifest_audio_path
from .dsp import add_noise_at_snr, lowpass_filter, quantize
from .mel import TorchMel, mel_spectrogram
from .vocoder import mel_to_waveform

log = logging.getLogger(__name__)

QUALITY_FORMAT = "voiceward-quality-v1"


class QualityTrainingError(RuntimeError):
    """Proxy failed its validation contract (clean >= 4, degraded below clean)."""


class _QualityNet(nn.Module):
    def __init__(self, n_mels: int = 80):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv1d(n_mels, 48, 5, padding=2), nn.ReLU(),
            nn.Conv1d(48, 64, 5, padding=2, stride=2), nn.ReLU(),
            nn.Conv1d(64, 64, 3, padding=1), nn.ReLU(),
        )
        self.head = nn.Linear(128, 1)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        h = self.conv(mel)
        pooled = torch.cat([h.mean(dim=-1), h.std(dim=-1)], dim=-1)
        return 1.0 + 4.0 * torch.sigmoid(self.head(pooled).squeeze(-1))


class QualityProxy(nn.Module):
    """Waveform -> predicted quality score in [1, 5]."""

    def __init__(self, sample_rate: int, mel_mean: np.ndarray, mel_std: np.ndarray):
        super().__init__()
        self.net = _QualityNet()
        self.sample_rate = sample_rate
        self.torch_mel = TorchMel(sample_rate)
        self.register_buffer("mel_mean", torch.from_numpy(np.asarray(mel_mean)).float())
        self.register_buffer("mel_std", torch.from_numpy(np.maximum(np.asarray(mel_std), 1e-3)).float())

    def _normalized_mel(self, samples: torch.Tensor) -> torch.Tensor:
        mel = self.torch_mel(samples)
        return (mel - self.mel_mean[None, :, None]) / self.mel_std[None, :, None]

    def predict_samples(self, samples: torch.Tensor) -> torch.Tensor:
        return self.net(self._normalized_mel(samples))

    def predict(self, waveform: Waveform) -> float:
        with torch.no_grad():
            score = self.predict_samples(torch.from_numpy(waveform.samples).float()[None])
        return float(score[0])

    def save(self, path: str | Path) -> None:
        payload = {
            "format": QUALITY_FORMAT,
            "sample_rate": self.sample_rate,
            "state_dict": self.state_dict(),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "QualityProxy":
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
        if payload.get("format") != QUALITY_FORMAT:
            raise ValueError(f"unsupported quality checkpoint {payload.get('format')!r} in {path}")
        proxy = cls(payload["sample_rate"], np.zeros(80), np.ones(80))
        proxy.load_state_dict(payload["state_dict"])
        proxy.eval()
        return proxy


def degradation_ladder(rng: np.random.Generator):
    """(name, severity in [0,1], waveform transform) triples.

    Severity 0 is pristine; 1 is barely intelligible. Scores are
    5 - 4 * severity.
    """

    def noisy(snr_db):
        def apply(w: Waveform) -> Waveform:
            out = add_noise_at_snr(w.samples, snr_db, rng)
            return Waveform(np.clip(out, -1.0, 1.0), w.sample_rate)
        return apply

    def lowpassed(cutoff):
        def apply(w: Waveform) -> Waveform:
            return Waveform(lowpass_filter(w.samples, cutoff, w.sample_rate), w.sample_rate)
        return apply

    def quantized(bits):
        def apply(w: Waveform) -> Waveform:
            return Waveform(quantize(w.samples, bits), w.sample_rate)
        return apply

    def gl_roundtrip(w: Waveform) -> Waveform:
        return mel_to_waveform(mel_spectrogram(w))

    def mel_corrupted(sigma):
        # corruption in the mel domain itself: what a disrupted synthesis
        # trajectory looks like, as opposed to channel noise on clean audio
        def apply(w: Waveform) -> Waveform:
            mel = mel_spectrogram(w)
            mel.frames = mel.frames + sigma * rng.standard_normal(mel.frames.shape)
            return mel_to_waveform(mel)
        return apply

    def chain(*fns):
        def apply(w: Waveform) -> Waveform:
            for fn in fns:
                w = fn(w)
            return w
        return apply

    return [
        ("clean", 0.0, lambda w: w),
        ("gl_roundtrip", 0.08, gl_roundtrip),
        ("noise_30db", 0.18, noisy(30.0)),
        ("noise_20db", 0.40, noisy(20.0)),
        ("noise_12db", 0.65, noisy(12.0)),
        ("noise_6db", 0.88, noisy(6.0)),
        ("lowpass_6k", 0.18, lowpassed(6000.0)),
        ("lowpass_4k", 0.35, lowpassed(4000.0)),
        ("lowpass_2500", 0.55, lowpassed(2500.0)),
        ("quantize_6bit", 0.45, quantized(6)),
        ("quantize_4bit", 0.78, quantized(4)),
        ("mel_corrupt_05", 0.35, mel_corrupted(0.5)),
        ("mel_corrupt_10", 0.60, mel_corrupted(1.0)),
        ("mel_corrupt_20", 0.85, mel_corrupted(2.0)),
        ("gl_noise_18db", 0.50, chain(gl_roundtrip, noisy(18.0))),
        ("gl_lowpass_3k", 0.55, chain(gl_roundtrip, lowpassed(3000.0))),
        ("noise_10db_lp4k", 0.85, chain(noisy(10.0), lowpassed(4000.0))),
    ]


def severity_to_score(severity: float) -> float:
    return 5.0 - 4.0 * float(np.clip(severity, 0.0, 1.0))


def train_quality_proxy(
    manifest_path: str | Path,
    seed: int = 0,
    steps: int = 300,
    batch_size: int = 16,
) -> QualityProxy:
    """Fit the proxy on degraded corpus audio; validates the ranking contract."""
    rows = load_manifest(manifest_path)
    rng = np.random.default_rng(seed)
    clean = [audio_mod.ingest(manifest_audio_path(manifest_path, row)) for row in rows]

    examples: list[tuple[np.ndarray, float]] = []
    for wav in clean:
        for name, severity, transform in degradation_ladder(rng):
            degraded = transform(wav)
            examples.append((mel_spectrogram(degraded).frames, severity_to_score(severity)))

    order = rng.permutation(len(examples))
    n_val = max(4, len(examples) // 10)
    val_idx, train_idx = order[:n_val], order[n_val:]

    train_frames = np.concatenate([examples[i][0] for i in train_idx], axis=0)
    mel_mean, mel_std = train_frames.mean(axis=0), train_frames.std(axis=0)

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        proxy = QualityProxy(clean[0].sample_rate, mel_mean, mel_std)

    min_frames = min(ex[0].shape[0] for ex in examples)

    def batch(idx: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        mels = np.stack([examples[i][0][:min_frames] for i in idx])
        mel = torch.from_numpy(mels).float().permute(0, 2, 1)
        mel = (mel - proxy.mel_mean[None, :, None]) / proxy.mel_std[None, :, None]
        targets = torch.tensor([examples[i][1] for i in idx], dtype=torch.float32)
        return mel, targets

    optimizer = torch.optim.Adam(proxy.parameters(), lr=2e-3)
    for step in range(steps):
        idx = rng.choice(train_idx, size=min(batch_size, len(train_idx)), replace=False)
        mel, targets = batch(idx)
        loss = F.mse_loss(proxy.net(mel), targets)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    proxy.eval()
    with torch.no_grad():
        mel, targets = batch(val_idx)
        val_mae = float((proxy.net(mel) - targets).abs().mean())
    log.info("quality proxy validation MAE: %.3f", val_mae)

    # ranking contract on held-out style checks
    check = clean[0]
    clean_score = proxy.predict(check)
    noisy_wav = Waveform(
        np.clip(add_noise_at_snr(check.samples, 10.0, np.random.default_rng(seed + 1)), -1, 1),
        check.sample_rate,
    )
    noisy_score = proxy.predict(noisy_wav)
    if clean_score < 4.0 or noisy_score >= clean_score:
        raise QualityTrainingError(
            f"quality proxy failed its contract: clean={clean_score:.2f} (need >= 4), "
            f"noisy={noisy_score:.2f} (need < clean); val MAE {val_mae:.3f}"
        )
    return proxy
