"""Speaker identity embeddings: defense-side extractor and ASV evaluator.

Two structurally different encoders are trained independently on the same
corpus with speaker cross-entropy. The defense extractor feeds the
identity objective during perturbation optimization (and must therefore be
differentiable down to the waveform); the ASV evaluator is used only for
scoring and enrollment, keeping optimization and evaluation decoupled.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import Waveform
from . import audio as audio_mod
from .corpus import ManifestRow, load_manifest, manifest_audio_path
from .mel import TorchMel, mel_spectrogram

log = logging.getLogger(__name__)

EMBEDDING_DIM = 128
ENCODER_FORMAT = "voiceward-encoder-v1"


class ExtractorTrainingError(RuntimeError):
    """Speaker classification accuracy below the contract threshold."""


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class GenderCentroid:
    vector: np.ndarray
    gender_class: str
    support_count: int


def centroid(embeddings: np.ndarray, classes: list[str] | None = None,
             gender_class: str = "") -> GenderCentroid:
    """Arithmetic mean of a homogeneous-class embedding set."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.size == 0:
        raise ValueError("cannot build a centroid from an empty embedding set")
    if classes is not None:
        distinct = set(classes)
        if len(distinct) != 1:
            raise ValueError(f"mixed classes in centroid input: {sorted(distinct)}")
        gender_class = next(iter(distinct))
    return GenderCentroid(embeddings.mean(axis=0), gender_class, embeddings.shape[0])


class _DefenseNet(nn.Module):
    """Wider, shallower conv encoder with mean pooling."""

    def __init__(self, n_mels: int, n_speakers: int, emb_dim: int = EMBEDDING_DIM):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv1d(n_mels, 64, 5, padding=2), nn.ReLU(),
            nn.Conv1d(64, 96, 5, padding=2, stride=2), nn.ReLU(),
            nn.Conv1d(96, 128, 5, padding=2), nn.ReLU(),
        )
        self.proj = nn.Linear(128, emb_dim)
        self.classifier = nn.Linear(emb_dim, n_speakers)

    def embed(self, mel: torch.Tensor) -> torch.Tensor:
        return self.proj(self.conv(mel).mean(dim=-1))


class _AsvNet(nn.Module):
    """Deeper, narrower conv encoder with mean+max pooling."""

    def __init__(self, n_mels: int, n_speakers: int, emb_dim: int = EMBEDDING_DIM):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv1d(n_mels, 48, 3, padding=1), nn.ReLU(),
            nn.Conv1d(48, 64, 3, padding=1, stride=2), nn.ReLU(),
            nn.Conv1d(64, 96, 3, padding=1), nn.ReLU(),
            nn.Conv1d(96, 96, 3, padding=1, stride=2), nn.ReLU(),
        )
        self.proj = nn.Linear(192, emb_dim)
        self.classifier = nn.Linear(emb_dim, n_speakers)

    def embed(self, mel: torch.Tensor) -> torch.Tensor:
        h = self.conv(mel)
        pooled = torch.cat([h.mean(dim=-1), h.max(dim=-1).values], dim=-1)
        return self.proj(pooled)


class IdentityExtractor(nn.Module):
    """Waveform -> fixed-dim identity embedding, differentiable end to end."""

    def __init__(self, net: nn.Module, sample_rate: int, source: str,
                 mel_mean: np.ndarray, mel_std: np.ndarray):
        super().__init__()
        self.net = net
        self.source = source  # "defense_extractor" | "asv_evaluator"
        self.sample_rate = sample_rate
        self.torch_mel = TorchMel(sample_rate)
        self.register_buffer("mel_mean", torch.from_numpy(np.asarray(mel_mean)).float())
        self.register_buffer("mel_std", torch.from_numpy(np.maximum(np.asarray(mel_std), 1e-3)).float())

    def embed_samples(self, samples: torch.Tensor) -> torch.Tensor:
        """Differentiable path used by the perturbation optimizer."""
        mel = self.torch_mel(samples)
        mel = (mel - self.mel_mean[None, :, None]) / self.mel_std[None, :, None]
        return self.net.embed(mel)

    def embed_waveform(self, waveform: Waveform) -> np.ndarray:
        with torch.no_grad():
            emb = self.embed_samples(torch.from_numpy(waveform.samples).float()[None])
        return emb[0].double().numpy()

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        arch = "defense" if isinstance(self.net, _DefenseNet) else "asv"
        n_speakers = self.net.classifier.out_features
        payload = {
            "format": ENCODER_FORMAT,
            "source": self.source,
            "arch": arch,
            "n_speakers": n_speakers,
            "sample_rate": self.sample_rate,
            "state_dict": self.state_dict(),
            "extra": extra or {},
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "IdentityExtractor":
        payload = torch.load(str(path), map_location="cpu", weights_only=False)
        if payload.get("format") != ENCODER_FORMAT:
            raise ValueError(f"unsupported encoder checkpoint {payload.get('format')!r} in {path}")
        net_cls = _DefenseNet if payload["arch"] == "defense" else _AsvNet
        net = net_cls(80, payload["n_speakers"])
        model = cls(net, payload["sample_rate"], payload["source"], np.zeros(80), np.ones(80))
        model.load_state_dict(payload["state_dict"])
        model.eval()
        return model


@dataclass
class _Example:
    mel: np.ndarray
    speaker_id: str
    utterance: int  # index of the clean utterance this example derives from
    original: bool


def _load_corpus_examples(
    manifest_path: str | Path, augment: bool = True, seed: int = 0
) -> list[_Example]:
    """Corpus mels plus robustness augmentations (same speaker labels).

    Clones are judged after phase-reconstruction vocoding, so the encoders
    must keep speaker identity stable under vocoder round trips and mild
    noise; augmenting the training set with those variants achieves that.
    """
    from .vocoder import mel_to_waveform

    rows = load_manifest(manifest_path)
    examples: list[_Example] = []
    for utt, row in enumerate(rows):
        wav = audio_mod.ingest(manifest_audio_path(manifest_path, row))
        mel = mel_spectrogram(wav)
        examples.append(_Example(mel.frames, row.speaker_id, utt, True))
        if augment:
            roundtrip = mel_to_waveform(mel)
            examples.append(_Example(mel_spectrogram(roundtrip).frames, row.speaker_id, utt, False))
    return examples


def _train_one(
    net: nn.Module,
    source: str,
    mels: list[np.ndarray],
    labels: np.ndarray,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    mel_mean: np.ndarray,
    mel_std: np.ndarray,
    sample_rate: int,
    steps: int,
    seed: int,
    min_accuracy: float,
) -> IdentityExtractor:
    rng = np.random.default_rng(seed)
    mean_t = torch.from_numpy(mel_mean).float()
    std_t = torch.from_numpy(np.maximum(mel_std, 1e-3)).float()

    def as_batch(idx: np.ndarray) -> torch.Tensor:
        length = min(m.shape[0] for m in mels)
        batch = np.stack([mels[i][:length] for i in idx])
        mel = torch.from_numpy(batch).float().permute(0, 2, 1)
        return (mel - mean_t[None, :, None]) / std_t[None, :, None]

    labels_t = torch.from_numpy(labels).long()
    optimizer = torch.optim.Adam(net.parameters(), lr=2e-3)
    batch_size = min(16, len(train_idx))
    for step in range(steps):
        idx = rng.choice(train_idx, size=batch_size, replace=False)
        logits = net.classifier(net.embed(as_batch(idx)))
        loss = F.cross_entropy(logits, labels_t[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    net.eval()
    with torch.no_grad():
        logits = net.classifier(net.embed(as_batch(val_idx)))
        accuracy = float((logits.argmax(dim=1) == labels_t[val_idx]).float().mean())
    if accuracy < min_accuracy:
        raise ExtractorTrainingError(
            f"{source}: held-out speaker accuracy {accuracy:.2%} below required {min_accuracy:.0%} "
            f"({len(val_idx)} held-out utterances, {steps} steps)"
        )
    log.info("%s: held-out speaker accuracy %.2f%%", source, 100 * accuracy)
    return IdentityExtractor(net, sample_rate, source, mel_mean, mel_std)


def _split_and_train(
    net: nn.Module,
    source: str,
    examples: list[_Example],
    speaker_ids: list[str],
    steps: int,
    seed: int,
    min_accuracy: float,
) -> IdentityExtractor:
    labels = np.array([speaker_ids.index(e.speaker_id) for e in examples])
    mels = [e.mel for e in examples]
    # hold out whole clean utterances per speaker; augmented copies leave with them
    rng = np.random.default_rng(seed)
    held_utterances: set[int] = set()
    for sid in speaker_ids:
        utts = sorted({e.utterance for e in examples if e.speaker_id == sid and e.original})
        held = rng.choice(utts, size=max(1, len(utts) // 5), replace=False)
        held_utterances.update(int(u) for u in held)
    val_idx = np.array([i for i, e in enumerate(examples)
                        if e.utterance in held_utterances and e.original])
    train_idx = np.array([i for i, e in enumerate(examples)
                          if e.utterance not in held_utterances])
    train_frames = np.concatenate([mels[i] for i in train_idx], axis=0)
    mel_mean, mel_std = train_frames.mean(axis=0), train_frames.std(axis=0)
    return _train_one(net, source, mels, labels, train_idx, val_idx,
                      mel_mean, mel_std, 22050, steps, seed, min_accuracy)


def train_extractors(
    manifest_path: str | Path,
    seed: int = 0,
    steps: int = 250,
    min_accuracy: float = 0.90,
) -> tuple[IdentityExtractor, IdentityExtractor]:
    """Train (defense_extractor, asv_evaluator) with disjoint parameters.

    The defense extractor trains on clean audio only (a plain representation
    model the optimizer differentiates through); the evaluator additionally
    sees vocoder round trips so its verdicts stay stable on vocoded clones.
    """
    clean_examples = _load_corpus_examples(manifest_path, augment=False, seed=seed)
    augmented_examples = _load_corpus_examples(manifest_path, augment=True, seed=seed)
    speaker_ids = sorted({e.speaker_id for e in clean_examples})
    if len(speaker_ids) < 2:
        raise ValueError("need at least two speakers to train identity encoders")

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        defense_net = _DefenseNet(80, len(speaker_ids))
    with torch.random.fork_rng():
        torch.manual_seed(seed + 7919)
        asv_net = _AsvNet(80, len(speaker_ids))

    defense = _split_and_train(defense_net, "defense_extractor", clean_examples,
                               speaker_ids, steps, seed + 1, min_accuracy)
    asv = _split_and_train(asv_net, "asv_evaluator", augmented_examples,
                           speaker_ids, steps, seed + 2, min_accuracy)
    return defense, asv


# ---- enrollment & verification -------------------------------------------------


def build_enrollment(manifest_path: str | Path, asv: IdentityExtractor) -> dict[str, dict]:
    """Mean ASV embedding per speaker over their clean utterances."""
    rows = load_manifest(manifest_path)
    per_speaker: dict[str, list[np.ndarray]] = {}
    for row in rows:
        wav = audio_mod.ingest(manifest_audio_path(manifest_path, row))
        per_speaker.setdefault(row.speaker_id, []).append(asv.embed_waveform(wav))
    return {
        speaker: {
            "speaker_id": speaker,
            "embedding": np.mean(embs, axis=0).tolist(),
            "n_utterances": len(embs),
        }
        for speaker, embs in per_speaker.items()
    }


def save_enrollment(store: dict[str, dict], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(store, fh, indent=2, sort_keys=True)


def load_enrollment(path: str | Path) -> dict[str, dict]:
    with open(path) as fh:
        return json.load(fh)


def asv_accept(
    y: Waveform,
    enrollment: np.ndarray,
    tau_asv: float,
    asv: IdentityExtractor,
) -> tuple[float, bool]:
    """Cosine score of y against an enrollment embedding; accept iff score >= tau."""
    score = cosine_similarity(asv.embed_waveform(y), np.asarray(enrollment))
    return score, score >= tau_asv


def pick_opposite_gender_speaker(
    rows: list[ManifestRow], target_gender: str, rng: np.random.Generator
) -> str:
    """Seeded random choice of one speaker from the opposite gender class."""
    candidates = sorted({r.speaker_id for r in rows if r.gender != target_gender})
    if not candidates:
        raise ValueError(f"no opposite-gender speakers available for class {target_gender!r}")
    return str(candidates[int(rng.integers(0, len(candidates)))])


def opposite_gender_centroid(
    manifest_path: str | Path,
    target_gender: str,
    extractor: IdentityExtractor,
    rng: np.random.Generator,
) -> GenderCentroid:
    """Centroid of one randomly selected opposite-gender speaker's utterances."""
    rows = load_manifest(manifest_path)
    speaker = pick_opposite_gender_speaker(rows, target_gender, rng)
    embs, classes = [], []
    for row in rows:
        if row.speaker_id != speaker:
            continue
        wav = audio_mod.ingest(manifest_audio_path(manifest_path, row))
        embs.append(extractor.embed_waveform(wav))
        classes.append(row.gender)
    return centroid(np.stack(embs), classes)
