"""Trainable diffusion voice-conversion model.

Wires the content bottleneck, reference encoder, and score U-Net together
with the variance-preserving schedule, and owns mel normalization
statistics. Provides score-matching training, tap-capturing conditioned
forward passes for the adversarial objectives, and reverse-SDE synthesis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .audio import Waveform
from .corpus import load_manifest, manifest_audio_path
from .diffusion import ScheduleError, VpSchedule
from .mel import MelSpectrogram, TorchMel, from_torch_mel_layout, mel_spectrogram, to_torch_mel_layout
from .unet import ContentBottleneck, ReferenceEncoder, ScoreUNet, TapCapture, TapRequest
from .vocoder import mel_to_waveform
from . import audio as audio_mod

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "voiceward-vc-v1"


class TrainingDiverged(RuntimeError):
    """Score-matching loss became non-finite."""


@dataclass
class FeatureTapBundle:
    """Everything captured in one conditioned forward pass."""

    score: torch.Tensor
    t_index: int
    t: float
    ctx_by_layer: dict[str, torch.Tensor] = field(default_factory=dict)
    feat_by_layer: dict[str, torch.Tensor] = field(default_factory=dict)
    attn_out_by_layer: dict[str, torch.Tensor] = field(default_factory=dict)
    attn_in_by_layer: dict[str, torch.Tensor] = field(default_factory=dict)

    def validate_finite(self) -> None:
        for name, group in (("ctx", self.ctx_by_layer), ("feat", self.feat_by_layer)):
            for layer, tensor in group.items():
                if not torch.isfinite(tensor).all():
                    raise ValueError(f"non-finite {name} tap at layer {layer}")
        if not torch.isfinite(self.score).all():
            raise ValueError("non-finite score prediction")


@dataclass
class SynthesisResult:
    mel_out: MelSpectrogram
    waveform_out: Waveform
    inference_steps: int
    seed: int


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_val_loss: float = float("nan")

    def val_improvement(self) -> float:
        """Fractional drop of the last validation loss vs initialization."""
        if not self.val_loss or not np.isfinite(self.initial_val_loss):
            return 0.0
        return 1.0 - self.val_loss[-1] / self.initial_val_loss


def _as_mel_tensor(mel: MelSpectrogram | torch.Tensor) -> torch.Tensor:
    if isinstance(mel, MelSpectrogram):
        return to_torch_mel_layout(mel)
    if mel.dim() == 2:
        mel = mel[None]
    return mel.float()


class VoiceConverter(nn.Module):
    """Diffusion VC model: weights are frozen after training; forward passes are pure."""

    def __init__(self, n_mels: int = 80, hidden: int = 256, sample_rate: int = 22050,
                 schedule: VpSchedule | None = None):
        super().__init__()
        self.schedule = schedule or VpSchedule()
        self.sample_rate = sample_rate
        self.n_mels = n_mels
        self.torch_mel = TorchMel(sample_rate)
        self.content = ContentBottleneck(n_mels)
        self.ref_encoder = ReferenceEncoder(n_mels, (hidden // 4, hidden // 2))
        self.unet = ScoreUNet(n_mels, hidden)
        self.register_buffer("mel_mean", torch.zeros(n_mels))
        self.register_buffer("mel_std", torch.ones(n_mels))

    # ---- mel-space plumbing -------------------------------------------------

    def set_mel_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.mel_mean.copy_(torch.from_numpy(np.asarray(mean)).float())
        self.mel_std.copy_(torch.from_numpy(np.maximum(np.asarray(std), 1e-3)).float())

    def normalize(self, mel: torch.Tensor) -> torch.Tensor:
        return (mel - self.mel_mean[None, :, None]) / self.mel_std[None, :, None]

    def denormalize(self, mel: torch.Tensor) -> torch.Tensor:
        return mel * self.mel_std[None, :, None] + self.mel_mean[None, :, None]

    def waveform_to_mel(self, samples: torch.Tensor) -> torch.Tensor:
        """Differentiable waveform -> public log-mel tensor [B, n_mels, T]."""
        return self.torch_mel(samples)

    def _coefs(self, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        s = self.schedule
        integral = s.beta_min * t + 0.5 * (s.beta_max - s.beta_min) * t * t
        mean_coef = torch.exp(-0.5 * integral)
        std = torch.sqrt(1.0 - torch.exp(-integral))
        return mean_coef, std

    # ---- conditioned forward with taps --------------------------------------

    def forward_with_taps(
        self,
        m_src: MelSpectrogram | torch.Tensor,
        ref_mel: MelSpectrogram | torch.Tensor,
        t_index: int,
        taps: TapRequest | None = None,
        generator: torch.Generator | None = None,
        sample: torch.Tensor | None = None,
    ) -> FeatureTapBundle:
        """One network evaluation at grid step ``t_index``; returns score + taps.

        The denoising input is the source mel pushed through the forward
        kernel at t (noise from ``generator``; seed 0 when omitted), unless
        an explicit ``sample`` in normalized mel space is supplied.
        """
        t = self.schedule.timestep(t_index)
        src = self.normalize(_as_mel_tensor(m_src))
        ref = self.normalize(_as_mel_tensor(ref_mel))
        if sample is None:
            if generator is None:
                generator = torch.Generator().manual_seed(0)
            m, std = self._coefs(torch.tensor([t]))
            noise = torch.randn(src.shape, generator=generator)
            sample = m * src + std * noise
        content = self.content(src)
        ref_feats = self.ref_encoder(ref)
        capture = TapCapture()
        # noise prediction with an analytic std(t)*x_t skip keeps the residual O(1)
        # at every t and the reverse drift contractive; score = -eps/std(t)
        _, std = self._coefs(torch.tensor([t]))
        residual = self.unet(sample, content, ref_feats, t, taps=taps, capture=capture)
        eps_pred = std * sample + residual
        score = -eps_pred / std
        bundle = FeatureTapBundle(
            score=score,
            t_index=t_index,
            t=t,
            ctx_by_layer=capture.ctx,
            feat_by_layer=capture.feat,
            attn_out_by_layer=capture.attn_out,
            attn_in_by_layer=capture.attn_in,
        )
        bundle.validate_finite()
        return bundle

    def reference_contexts(self, ref_mel: MelSpectrogram | torch.Tensor) -> dict[str, torch.Tensor]:
        """Per-layer attention context matrices for a reference (t-independent)."""
        ref_feats = self.ref_encoder(self.normalize(_as_mel_tensor(ref_mel)))
        attn_map = self.unet._attention_map()
        return {layer: attn.context(ref_feats[level]) for layer, (attn, level) in attn_map.items()}

    def noise_features(
        self, n_frames: int, t_index: int, generator: torch.Generator,
        feat_layers: tuple[str, ...] | None = None,
    ) -> dict[str, torch.Tensor]:
        """Up-path features from a pure-noise input used as both content and reference."""
        layers = feat_layers or self.unet.up_feature_layers
        z = torch.randn((1, self.n_mels, n_frames), generator=generator)
        taps = TapRequest(feat_layers=frozenset(layers))
        t = self.schedule.timestep(t_index)
        m, std = self._coefs(torch.tensor([t]))
        sample = m * z + std * torch.randn(z.shape, generator=generator)
        capture = TapCapture()
        with torch.no_grad():
            self.unet(sample, self.content(z), self.ref_encoder(z), t, taps=taps, capture=capture)
        return {k: v.detach() for k, v in capture.feat.items()}

    # ---- synthesis -----------------------------------------------------------

    def synthesize(
        self,
        x_src: Waveform,
        x_ref: Waveform,
        inference_steps: int = 100,
        seed: int = 0,
    ) -> SynthesisResult:
        """Reverse-SDE sampling conditioned on (content of x_src, identity of x_ref)."""
        if inference_steps < 1:
            raise ScheduleError(f"inference_steps must be >= 1, got {inference_steps}")
        m_src = mel_spectrogram(x_src)
        ref_mel = mel_spectrogram(x_ref)
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            src = self.normalize(to_torch_mel_layout(m_src))
            content = self.content(src)
            ref_feats = self.ref_encoder(self.normalize(to_torch_mel_layout(ref_mel)))
            x = torch.randn(src.shape, generator=generator)
            ts = np.linspace(1.0, 1e-3, inference_steps + 1)
            for k in range(inference_steps):
                t = float(ts[k])
                h = float(ts[k] - ts[k + 1])
                beta = self.schedule.beta(t)
                std = math.sqrt(self.schedule.variance(t))
                eps_pred = std * x + self.unet(x, content, ref_feats, t)
                score = -eps_pred / std
                x = x + (0.5 * beta * x + beta * score) * h
                if k < inference_steps - 1:
                    x = x + math.sqrt(beta * h) * torch.randn(x.shape, generator=generator)
            mel_out = from_torch_mel_layout(self.denormalize(x), self.sample_rate)
        waveform = mel_to_waveform(mel_out)
        return SynthesisResult(mel_out, waveform, inference_steps, seed)

    # ---- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "hyper": {"n_mels": self.n_mels, "hidden": self.unet.hidden, "sample_rate": self.sample_rate},
            "schedule": {
                "beta_min": self.schedule.beta_min,
                "beta_max": self.schedule.beta_max,
                "n_steps": self.schedule.n_steps,
            },
            "layer_registry": self.unet.layer_registry(),
            "state_dict": self.state_dict(),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "VoiceConverter":
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {payload.get('format')!r} in {path}")
        model = cls(
            n_mels=payload["hyper"]["n_mels"],
            hidden=payload["hyper"]["hidden"],
            sample_rate=payload["hyper"]["sample_rate"],
            schedule=VpSchedule(**payload["schedule"]),
        )
        model.load_state_dict(payload["state_dict"])
        model.eval()
        return model


# ---- training ----------------------------------------------------------------


def _crop_or_pad(frames: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    if frames.shape[0] >= length:
        start = int(rng.integers(0, frames.shape[0] - length + 1))
        return frames[start : start + length]
    pad = np.full((length - frames.shape[0], frames.shape[1]), np.log(1e-5))
    return np.concatenate([frames, pad], axis=0)


def train_score(
    manifest_path: str | Path,
    epochs: int,
    seed: int = 0,
    hidden: int = 256,
    batch_size: int = 8,
    crop_frames: int = 64,
    lr: float = 2e-4,
    recon_weight: float = 1.0,
) -> tuple[VoiceConverter, TrainHistory]:
    """Denoising score matching on corpus mels; one utterance per speaker held out.

    Each training item pairs an utterance (denoising target + content input)
    with a different utterance of the same speaker as the reference, so the
    network must pull speaker detail through the attention conditioning.
    """
    rows = load_manifest(manifest_path)
    by_speaker: dict[str, list[np.ndarray]] = {}
    for row in rows:
        wav = audio_mod.ingest(manifest_audio_path(manifest_path, row))
        by_speaker.setdefault(row.speaker_id, []).append(mel_spectrogram(wav).frames)
    if any(len(v) < 2 for v in by_speaker.values()):
        raise ValueError("each speaker needs >= 2 utterances to form reference pairs")

    train_items: list[tuple[str, int]] = []
    val_items: list[tuple[str, int]] = []
    for speaker, mels in by_speaker.items():
        for i in range(len(mels)):
            (val_items if i == len(mels) - 1 and len(mels) > 2 else train_items).append((speaker, i))

    all_train = np.concatenate([by_speaker[s][i] for s, i in train_items], axis=0)
    mean, std = all_train.mean(axis=0), all_train.std(axis=0)

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = VoiceConverter(hidden=hidden)
    model.set_mel_stats(mean, std)
    history = TrainHistory()

    rng = np.random.default_rng(seed)
    val_noise_seed = int(rng.integers(0, 2**31 - 1))

    def batch_loss(
        items: list[tuple[str, int]], noise_gen: torch.Generator, item_rng: np.random.Generator
    ) -> tuple[torch.Tensor, torch.Tensor]:
        x0_list, ref_list = [], []
        for speaker, i in items:
            mels = by_speaker[speaker]
            x0_list.append(_crop_or_pad(mels[i], crop_frames, item_rng))
            j = int(item_rng.integers(0, len(mels) - 1))
            j = j if j < i else j + 1  # any other utterance of the same speaker
            ref_list.append(_crop_or_pad(mels[j], crop_frames, item_rng))
        x0 = model.normalize(torch.from_numpy(np.stack(x0_list)).float().permute(0, 2, 1))
        ref = model.normalize(torch.from_numpy(np.stack(ref_list)).float().permute(0, 2, 1))
        t_idx = torch.from_numpy(item_rng.integers(1, model.schedule.n_steps + 1, size=len(items)))
        t = t_idx.float() / model.schedule.n_steps
        m, sigma = model._coefs(t)
        m, sigma = m[:, None, None], sigma[:, None, None]
        noise = torch.randn(x0.shape, generator=noise_gen)
        x_t = m * x0 + sigma * noise
        content = model.content(x0)
        eps_pred = sigma * x_t + model.unet(x_t, content, model.ref_encoder(ref), t)
        # noise-prediction form of score matching (lambda_t = variance weighting)
        dsm = ((eps_pred - noise) ** 2).mean()
        # reconstruct the speaker-normalized mel: no pressure to keep identity
        x0_norm = (x0 - x0.mean(dim=-1, keepdim=True)) / (x0.std(dim=-1, keepdim=True) + 1e-5)
        recon = ((content - x0_norm) ** 2).mean()
        return dsm + recon_weight * recon, dsm

    def validation_loss() -> float:
        items = val_items or train_items
        gen = torch.Generator().manual_seed(val_noise_seed)
        vrng = np.random.default_rng(val_noise_seed)
        with torch.no_grad():
            _, dsm = batch_loss(items, gen, vrng)
        return float(dsm)

    history.initial_val_loss = validation_loss()
    if epochs == 0:
        model.eval()
        return model, history

    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    noise_gen = torch.Generator().manual_seed(int(rng.integers(0, 2**31 - 1)))
    steps_per_epoch = max(1, len(train_items) // batch_size)
    for epoch in range(epochs):
        model.train()
        epoch_losses = []
        order = rng.permutation(len(train_items))
        for step in range(steps_per_epoch):
            idx = order[(step * batch_size) % len(order) :][:batch_size]
            items = [train_items[i] for i in idx]
            loss, dsm = batch_loss(items, noise_gen, rng)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(dsm.detach()))
        model.eval()
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(validation_loss())
        log.info("epoch %d: train dsm %.4f val dsm %.4f", epoch, history.train_loss[-1], history.val_loss[-1])

    if history.val_improvement() < 0.30:
        log.warning(
            "validation loss dropped only %.1f%% (target >= 30%%); consider more epochs",
            100 * history.val_improvement(),
        )
    model.eval()
    return model, history
