"""Synthetic multi-speaker corpus generator.

Stands in for a real speech dataset: each speaker is a source-filter voice
with a fixed fundamental band and formant set. The two gender classes (A
low-pitched, B high-pitched) occupy disjoint F0 ranges, so opposite-gender
centroids are well-defined and mean-F0 separates the classes exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import TARGET_RATE, Waveform, write_wav

# Disjoint F0 bands per gender class (Hz).
F0_RANGE_A = (95.0, 135.0)
F0_RANGE_B = (165.0, 225.0)

# Formant templates (Hz) per class; per-speaker jitter applied on top.
FORMANTS_A = (620.0, 1180.0, 2450.0)
FORMANTS_B = (780.0, 1450.0, 2900.0)


class CorpusError(ValueError):
    """Invalid speaker specification or unusable output location."""


@dataclass(frozen=True)
class SpeakerSpec:
    speaker_id: str
    gender_class: str  # "A" or "B"
    f0_base: float
    formants: tuple[float, ...]
    rng_seed: int

    def __post_init__(self) -> None:
        if self.gender_class not in ("A", "B"):
            raise CorpusError(f"gender_class must be 'A' or 'B', got {self.gender_class!r}")
        lo, hi = F0_RANGE_A if self.gender_class == "A" else F0_RANGE_B
        if not lo <= self.f0_base <= hi:
            raise CorpusError(
                f"{self.speaker_id}: f0_base {self.f0_base} outside class-{self.gender_class} "
                f"range [{lo}, {hi}]"
            )


@dataclass
class ManifestRow:
    speaker_id: str
    gender: str
    path: str


def default_speaker_specs(n_per_class: int, seed: int = 0) -> list[SpeakerSpec]:
    """Evenly spaced F0 per class plus well-separated formant fingerprints.

    Formants are spread on alternating sides of the class template (scaled
    by speaker index) so every speaker has a distinct spectral envelope;
    identity is carried by the (F0, formant) combination, not F0 alone.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for cls, (lo, hi), template in (("A", F0_RANGE_A, FORMANTS_A), ("B", F0_RANGE_B, FORMANTS_B)):
        f0s = np.linspace(lo + 5.0, hi - 5.0, n_per_class)
        offsets = np.linspace(-0.16, 0.16, n_per_class)
        for i, f0 in enumerate(f0s):
            signs = np.array([(-1.0) ** (i + k) for k in range(len(template))])
            scale = 1.0 + signs * offsets[i] + rng.uniform(-0.02, 0.02, size=len(template))
            specs.append(
                SpeakerSpec(
                    speaker_id=f"spk{cls}{i}",
                    gender_class=cls,
                    f0_base=float(f0),
                    formants=tuple(float(f * s) for f, s in zip(template, scale)),
                    rng_seed=int(rng.integers(0, 2**31 - 1)),
                )
            )
    return specs


def _resonator(samples: np.ndarray, freq: float, bandwidth: float, sample_rate: int) -> np.ndarray:
    """Second-order resonant filter (one formant)."""
    r = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2.0 * np.pi * freq / sample_rate
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    b = np.array([1.0 - r])
    return signal.lfilter(b, a, samples)


def synth_utterance(
    spec: SpeakerSpec,
    utterance_index: int,
    duration: float = 0.8,
    sample_rate: int = TARGET_RATE,
) -> Waveform:
    """One syllable-structured utterance for a speaker, fully seeded.

    The voiced source is a sawtooth at the speaker's F0 with <=1% vibrato,
    shaped by the speaker's formant resonators, so mean F0 tracks
    ``spec.f0_base`` well within the 2% corpus contract.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.rng_seed).spawn(utterance_index + 1)[0])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    # per-utterance pitch drift kept within +-1.5% so mean F0 honors the 2% contract
    drift = 1.0 + rng.uniform(-0.015, 0.015)
    vibrato = 1.0 + 0.01 * np.sin(2.0 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    phase = np.cumsum(spec.f0_base * drift * vibrato) / sample_rate
    source = signal.sawtooth(2.0 * np.pi * phase)

    # syllable amplitude envelope: 2-4 voiced bursts with short gaps
    n_syll = int(rng.integers(2, 5))
    env = np.zeros(n)
    onsets = []
    edges = np.linspace(0, n, n_syll + 1).astype(int)
    for k in range(n_syll):
        seg = slice(edges[k], edges[k + 1])
        length = edges[k + 1] - edges[k]
        ramp = min(length // 6, int(0.02 * sample_rate))
        body = np.ones(length) * rng.uniform(0.5, 0.9)
        if ramp > 0:
            body[:ramp] *= np.linspace(0.0, 1.0, ramp)
            body[-ramp:] *= np.linspace(1.0, 0.0, ramp)
        env[seg] = body
        onsets.append(edges[k])

    voiced = source * env
    out = np.zeros(n)
    for k, freq in enumerate(spec.formants):
        # per-utterance formant wobble gives speakers realistic intra-variability
        wobble = rng.uniform(0.92, 1.08)
        out += _resonator(voiced, freq * wobble, 80.0 + 40.0 * k, sample_rate)

    # plosive-like broadband bursts at syllable onsets; they dominate the peak,
    # giving a speech-like crest factor once the file is peak-normalized
    voiced_peak = np.max(np.abs(out)) or 1.0
    burst_len = int(0.004 * sample_rate)
    for onset in onsets:
        if rng.uniform() < 0.8 and onset + burst_len < n:
            burst = rng.standard_normal(burst_len) * np.linspace(1.0, 0.0, burst_len) ** 2
            out[onset : onset + burst_len] += 2.5 * voiced_peak * burst
    out += 8e-4 * voiced_peak * rng.standard_normal(n)  # faint breath floor

    peak = np.max(np.abs(out))
    if peak > 0:
        out = 0.95 * out / peak
    return Waveform(out, sample_rate)


def synth_corpus(
    specs: list[SpeakerSpec],
    utterances_per_speaker: int,
    out_dir: str | Path,
    duration: float = 0.8,
) -> Path:
    """Write WAVs plus a ``manifest.csv`` (speaker_id,gender,path). Returns the manifest path."""
    by_class: dict[str, int] = {}
    for s in specs:
        by_class[s.gender_class] = by_class.get(s.gender_class, 0) + 1
    if by_class.get("A", 0) < 2 or by_class.get("B", 0) < 2:
        raise CorpusError(f"need >= 2 speakers per gender class, got {by_class}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create corpus directory {out_dir}: {exc}") from exc

    rows: list[ManifestRow] = []
    for spec in specs:
        for u in range(utterances_per_speaker):
            wav = synth_utterance(spec, u, duration=duration)
            rel = f"{spec.speaker_id}_{u:03d}.wav"
            write_wav(out_dir / rel, wav)
            rows.append(ManifestRow(spec.speaker_id, spec.gender_class, rel))

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["speaker_id", "gender", "path"])
        for row in rows:
            writer.writerow([row.speaker_id, row.gender, row.path])
    return manifest


def load_manifest(manifest_path: str | Path) -> list[ManifestRow]:
    manifest_path = Path(manifest_path)
    rows = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["speaker_id", "gender", "path"]:
            raise CorpusError(f"unexpected manifest header: {reader.fieldnames}")
        for rec in reader:
            rows.append(ManifestRow(rec["speaker_id"], rec["gender"], rec["path"]))
    if not rows:
        raise CorpusError(f"empty manifest: {manifest_path}")
    return rows


def manifest_audio_path(manifest_path: str | Path, row: ManifestRow) -> Path:
    return Path(manifest_path).parent / row.path
