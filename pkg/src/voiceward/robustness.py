"""Lossy channel simulation applied to protected audio before cloning.

Three transform families at the swept severity levels: codec compression
(delegating to an external encoder command when configured, else a
documented quantization + bandwidth-reduction proxy), additive Gaussian
noise at an exact target SNR, and FIR low-pass filtering with a >= 40 dB
stopband at the nominal cutoff. The sweep re-clones each transformed
sample and evaluates the full metric row per (sample, transform) cell.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, read_wav, write_wav
from .dsp import add_noise_at_snr, lowpass_filter, quantize

log = logging.getLogger(__name__)

CODEC_CMD_ENV = "VOICEWARD_CODEC_CMD"

SWEPT_LEVELS = {
    "compression": (128, 96, 64, 48, 32),  # kbps
    "gaussian_noise": (30, 25, 20, 15, 10),  # target SNR dB
    "lowpass": (7000, 6000, 5000, 4000, 3000),  # cutoff Hz
}

# compression proxy: kbps -> (quantization bits, bandwidth Hz)
_PROXY_BITS = {32: 6, 48: 7, 64: 8, 96: 10, 128: 12}
_PROXY_BANDWIDTH = {32: 4000.0, 48: 5500.0, 64: 7000.0, 96: 9000.0, 128: 10000.0}


class TransformError(ValueError):
    """Invalid transform kind/level or failed external encoder."""


@dataclass(frozen=True)
class LossyTransform:
    kind: str  # "compression" | "gaussian_noise" | "lowpass" | "none"
    level: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "none":
            return
        if self.kind not in SWEPT_LEVELS:
            raise TransformError(f"unknown transform kind {self.kind!r}")
        if self.level <= 0:
            raise TransformError(f"{self.kind} level must be positive, got {self.level}")
        if self.level not in SWEPT_LEVELS[self.kind]:
            warnings.warn(
                f"{self.kind} level {self.level} outside the swept set {SWEPT_LEVELS[self.kind]}",
                stacklevel=2,
            )

    @property
    def label(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}:{self.level:g}"


def _compression_proxy(w: Waveform, kbps: float) -> Waveform:
    kbps_grid = sorted(_PROXY_BITS)
    bits = float(np.interp(kbps, kbps_grid, [_PROXY_BITS[k] for k in kbps_grid]))
    bandwidth = float(np.interp(kbps, kbps_grid, [_PROXY_BANDWIDTH[k] for k in kbps_grid]))
    out = quantize(w.samples, int(round(bits)))
    if bandwidth < w.sample_rate / 2:
        out = lowpass_filter(out, bandwidth, w.sample_rate)
    return Waveform(np.clip(out, -1.0, 1.0), w.sample_rate)


def _compression_external(w: Waveform, kbps: float, command: str) -> Waveform:
    """Run a user-supplied encoder command with {in}/{out}/{kbps} placeholders."""
    with tempfile.TemporaryDirectory(prefix="voiceward-codec-") as tmp:
        src = Path(tmp) / "in.wav"
        dst = Path(tmp) / "out.wav"
        write_wav(src, w)
        cmd = command.format(**{"in": shlex.quote(str(src)), "out": shlex.quote(str(dst)), "kbps": int(kbps)})
        result = subprocess.run(cmd, shell=True, capture_output=True, text=True)
        if result.returncode != 0 or not dst.exists():
            raise TransformError(
                f"external encoder failed (exit {result.returncode}): {result.stderr.strip()[:500]}"
            )
        samples, rate = read_wav(dst)
        if rate != w.sample_rate:
            raise TransformError(f"external encoder changed sample rate {w.sample_rate} -> {rate}")
        # codecs may pad by a few samples; re-align to the input length
        if len(samples) >= len(w.samples):
            samples = samples[: len(w.samples)]
        else:
            samples = np.pad(samples, (0, len(w.samples) - len(samples)))
        return Waveform(np.clip(samples, -1.0, 1.0), w.sample_rate)


def apply_transform(
    w: Waveform,
    transform: LossyTransform,
    seed: int = 0,
    codec_cmd: str | None = None,
    allow_proxy: bool = True,
) -> tuple[Waveform, bool]:
    """Apply a lossy transform; returns (audio, proxy_used).

    ``codec_cmd`` defaults to the VOICEWARD_CODEC_CMD environment variable.
    Noise and lowpass never change length or rate; the compression proxy is
    length-preserving too, and the external path is re-aligned.
    """
    if transform.kind == "none":
        return Waveform(w.samples.copy(), w.sample_rate), False
    if transform.kind == "gaussian_noise":
        rng = np.random.default_rng(seed)
        return Waveform(add_noise_at_snr(w.samples, transform.level, rng), w.sample_rate), False
    if transform.kind == "lowpass":
        return Waveform(lowpass_filter(w.samples, transform.level, w.sample_rate), w.sample_rate), False
    if transform.kind == "compression":
        command = codec_cmd if codec_cmd is not None else os.environ.get(CODEC_CMD_ENV)
        if command:
            return _compression_external(w, transform.level, command), False
        if not allow_proxy:
            raise TransformError(
                f"no external encoder configured (set {CODEC_CMD_ENV}) and proxy disabled"
            )
        return _compression_proxy(w, transform.level), True
    raise TransformError(f"unknown transform kind {transform.kind!r}")


def default_transform_grid() -> list[LossyTransform]:
    return [LossyTransform(kind, level) for kind, levels in SWEPT_LEVELS.items() for level in levels]


def parse_transform(spec_str: str) -> LossyTransform:
    """Parse "kind:level" (or "none") into a LossyTransform."""
    if spec_str.strip() == "none":
        return LossyTransform("none")
    try:
        kind, level = spec_str.split(":")
        return LossyTransform(kind.strip(), float(level))
    except TransformError:
        raise
    except ValueError as exc:
        raise TransformError(f"cannot parse transform {spec_str!r}; expected kind:level") from exc


def robustness_sweep(
    protected_set: list,
    transforms: list[LossyTransform],
    model,
    evaluators,
    inference_steps: int = 100,
    seed: int = 0,
    codec_cmd: str | None = None,
) -> list[dict]:
    """Evaluate every (sample, transform) cell; per-cell failures do not abort.

    ``protected_set`` holds pipeline.ProtectedSample entries; ``evaluators``
    is a pipeline.Evaluators bundle. Returns one aggregate row per transform
    (the untransformed row first), each shaped like the robustness table:
    lossy_type, level, dtw, asv_rate, quality, dsr plus bookkeeping fields.
    """
    from . import pipeline  # local import: pipeline orchestrates on top of this module

    rows: list[dict] = []
    all_transforms = [LossyTransform("none")] + list(transforms)
    for transform in all_transforms:
        cells = []
        failures = 0
        proxy_used = False
        for i, sample in enumerate(protected_set):
            try:
                transformed, used_proxy = apply_transform(
                    sample.x_adv, transform, seed=seed + 1000 * i, codec_cmd=codec_cmd
                )
                proxy_used = proxy_used or used_proxy
                metrics_row = pipeline.evaluate_clone_pair(
                    sample, transformed, model, evaluators,
                    inference_steps=inference_steps, seed=seed + i,
                )
                cells.append(metrics_row)
            except Exception as exc:  # noqa: BLE001 - sweep must survive per-cell failures
                failures += 1
                log.warning("sweep cell failed (%s, %s): %s", sample.sample_id, transform.label, exc)
        row = pipeline.aggregate_cells(cells, evaluators.thresholds)
        row.update(
            {
                "lossy_type": transform.kind,
                "level": transform.level if transform.kind != "none" else "",
                "failures": failures,
                "compression_proxy": proxy_used,
            }
        )
        rows.append(row)
    return rows
