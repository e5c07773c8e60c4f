"""Shared experiment orchestration: protect, clone, and score sample sets.

Glue between the optimizer, the synthesis model, and the metric suite so
the CLI commands, the robustness sweep, and the ablation driver all share
one code path. Undefended and defended clones of a sample always use the
same synthesis seed, so output differences are attributable to the
reference audio alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform
from . import audio as audio_mod
from .corpus import ManifestRow, load_manifest, manifest_audio_path
from .identity import (
    GenderCentroid,
    IdentityExtractor,
    cosine_similarity,
    opposite_gender_centroid,
)
from .losses import LossWeights
from .metrics import (
    DecisionThresholds,
    SampleMetrics,
    asv_acceptance_rate,
    defense_success,
    dsr,
    dtw_distance,
    mcd,
    snr_db,
    spectrogram_ssim,
)
from .pgd import AdversarialState, PgdConfig, protect
from .quality import QualityProxy
from .vc import SynthesisResult, VoiceConverter

log = logging.getLogger(__name__)


@dataclass
class Evaluators:
    """Everything needed to score a clone against its target speaker."""

    asv: IdentityExtractor
    quality: QualityProxy
    enrollment: dict[str, dict]
    thresholds: DecisionThresholds


@dataclass
class ProtectedSample:
    sample_id: str
    speaker_id: str
    gender: str
    x_ref: Waveform
    x_src: Waveform
    x_adv: Waveform
    seed: int


def pick_source_row(
    rows: list[ManifestRow], target: ManifestRow, rng: np.random.Generator
) -> ManifestRow:
    """Gender-matched source utterance from a different speaker."""
    candidates = [r for r in rows if r.gender == target.gender and r.speaker_id != target.speaker_id]
    if not candidates:
        raise ValueError(f"no gender-matched source candidates for {target.speaker_id}")
    return candidates[int(rng.integers(0, len(candidates)))]


def protect_reference(
    manifest_path: str | Path,
    target_row: ManifestRow,
    model: VoiceConverter,
    defense: IdentityExtractor,
    cfg: PgdConfig,
    weights: LossWeights | None = None,
    sample_id: str | None = None,
    c_opp: GenderCentroid | None = None,
    x_src: Waveform | None = None,
) -> tuple[ProtectedSample, AdversarialState]:
    """End-to-end protection of one manifest row (source + centroid seeded from cfg)."""
    rows = load_manifest(manifest_path)
    rng = np.random.default_rng(cfg.seed)
    x_ref = audio_mod.ingest(manifest_audio_path(manifest_path, target_row))
    if x_src is None:
        src_row = pick_source_row(rows, target_row, rng)
        x_src = audio_mod.ingest(manifest_audio_path(manifest_path, src_row))
    if c_opp is None:
        c_opp = opposite_gender_centroid(manifest_path, target_row.gender, defense, rng)
    state = protect(x_ref, x_src, model, defense, c_opp, cfg, weights)
    sample = ProtectedSample(
        sample_id=sample_id or f"{target_row.speaker_id}_{cfg.seed}",
        speaker_id=target_row.speaker_id,
        gender=target_row.gender,
        x_ref=x_ref,
        x_src=x_src,
        x_adv=state.x_adv,
        seed=cfg.seed,
    )
    return sample, state


def evaluate_clone_pair(
    sample: ProtectedSample,
    cloning_ref: Waveform,
    model: VoiceConverter,
    evaluators: Evaluators,
    inference_steps: int = 100,
    seed: int = 0,
    y_clean: SynthesisResult | None = None,
) -> SampleMetrics:
    """Full metric row for one sample: clone from ``cloning_ref`` vs the clean clone."""
    if y_clean is None:
        y_clean = model.synthesize(sample.x_src, sample.x_ref, inference_steps, seed)
    y_adv = model.synthesize(sample.x_src, cloning_ref, inference_steps, seed)

    enrollment = np.asarray(evaluators.enrollment[sample.speaker_id]["embedding"])
    asv_score = cosine_similarity(evaluators.asv.embed_waveform(y_adv.waveform_out), enrollment)
    quality = evaluators.quality.predict(y_adv.waveform_out)
    row = SampleMetrics(
        sample_id=sample.sample_id,
        asv_score=asv_score,
        quality=quality,
        dtw=dtw_distance(y_clean.mel_out, y_adv.mel_out),
        ssim=spectrogram_ssim(y_clean.waveform_out, y_adv.waveform_out),
        mcd=mcd(sample.x_ref, sample.x_adv),
        snr=snr_db(sample.x_ref, sample.x_adv),
        success=defense_success(asv_score, quality, evaluators.thresholds),
    )
    return row


def evaluate_undefended(
    sample: ProtectedSample,
    model: VoiceConverter,
    evaluators: Evaluators,
    inference_steps: int = 100,
    seed: int = 0,
) -> SampleMetrics:
    """Score the clean clone itself (the no-defense reference point)."""
    y = model.synthesize(sample.x_src, sample.x_ref, inference_steps, seed)
    enrollment = np.asarray(evaluators.enrollment[sample.speaker_id]["embedding"])
    asv_score = cosine_similarity(evaluators.asv.embed_waveform(y.waveform_out), enrollment)
    quality = evaluators.quality.predict(y.waveform_out)
    return SampleMetrics(
        sample_id=sample.sample_id + "/undefended",
        asv_score=asv_score,
        quality=quality,
        dtw=0.0,
        ssim=1.0,
        mcd=0.0,
        snr=float("inf"),
        success=defense_success(asv_score, quality, evaluators.thresholds),
    )


def select_reference_rows(rows: list[ManifestRow], n: int, rng: np.random.Generator) -> list[ManifestRow]:
    """n reference rows cycling through speakers so genders stay balanced."""
    by_speaker: dict[str, list[ManifestRow]] = {}
    for row in rows:
        by_speaker.setdefault(row.speaker_id, []).append(row)
    speakers = sorted(by_speaker)
    speakers.sort(key=lambda s: by_speaker[s][0].gender)  # stable A/B interleave below
    order: list[str] = []
    a_side = [s for s in speakers if by_speaker[s][0].gender == "A"]
    b_side = [s for s in speakers if by_speaker[s][0].gender == "B"]
    for i in range(max(len(a_side), len(b_side))):
        if i < len(a_side):
            order.append(a_side[i])
        if i < len(b_side):
            order.append(b_side[i])
    picked = []
    for i in range(n):
        speaker = order[i % len(order)]
        utts = by_speaker[speaker]
        picked.append(utts[int(rng.integers(0, len(utts)))])
    return picked


def parallel_map(fn, items: list, jobs: int = 1) -> list:
    """Order-preserving map, threaded when jobs > 1 (samples are independent)."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def aggregate_cells(cells: list[SampleMetrics], thresholds: DecisionThresholds) -> dict:
    """Aggregate per-sample rows into one table row (means; rates per definitions)."""
    if not cells:
        return {
            "n_samples": 0, "dtw": float("nan"), "asv_rate": float("nan"),
            "asv_score_mean": float("nan"), "ssim": float("nan"), "quality": float("nan"),
            "dsr": float("nan"), "mcd": float("nan"), "snr": float("nan"),
        }
    finite_snrs = [c.snr for c in cells if np.isfinite(c.snr)]
    return {
        "n_samples": len(cells),
        "dtw": float(np.mean([c.dtw for c in cells])),
        "asv_rate": asv_acceptance_rate(cells, thresholds),
        "asv_score_mean": float(np.mean([c.asv_score for c in cells])),
        "ssim": float(np.mean([c.ssim for c in cells])),
        "quality": float(np.mean([c.quality for c in cells])),
        "dsr": dsr(cells, thresholds),
        "mcd": float(np.mean([c.mcd for c in cells])),
        "snr": float(np.mean(finite_snrs)) if finite_snrs else float("inf"),
    }
