"""Command-line surface tying the pipeline into reproducible experiments.

Subcommands mirror the experiment stages: gen-corpus, train-model,
train-encoders, protect, clone, evaluate, robustness, ablate,
baseline-noise. Every command is reproducible from its config/flags alone;
flags win over config-file values. Exit codes: 0 ok, 1 usage, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import audio as audio_mod
from .audio import Waveform, write_wav
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .corpus import CorpusError, default_speaker_specs, load_manifest, manifest_audio_path, synth_corpus
from .identity import (
    IdentityExtractor,
    build_enrollment,
    cosine_similarity,
    load_enrollment,
    save_enrollment,
    train_extractors,
)
from .losses import LossWeights
from .metrics import (
    DecisionThresholds,
    SampleMetrics,
    defense_success,
    dtw_distance,
    mcd,
    snr_db,
    spectrogram_ssim,
)
from .mel import mel_spectrogram
from .pgd import PgdConfig, PgdConfigError, protect, random_noise_baseline
from .pipeline import (
    Evaluators,
    ProtectedSample,
    aggregate_cells,
    evaluate_clone_pair,
    evaluate_undefended,
    parallel_map,
    protect_reference,
    select_reference_rows,
)
from .quality import QualityProxy, train_quality_proxy
from . import reporting
from .robustness import LossyTransform, TransformError, default_transform_grid, parse_transform, robustness_sweep
from .vc import VoiceConverter, train_score

log = logging.getLogger("voiceward.cli")

ABLATE_COLUMNS = [
    "axis", "value", "n_samples", "dtw", "asv_rate", "ssim", "quality", "dsr",
    "mcd", "snr", "protect_seconds_mean", "clone_seconds_mean", "failures",
]
ROBUSTNESS_COLUMNS = [
    "lossy_type", "level", "dtw", "asv_rate", "quality", "dsr",
    "n_samples", "failures", "compression_proxy",
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        raise UsageError(message)


# --------------------------------------------------------------------------- helpers


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = {}
    for name in ("corpus", "model_checkpoint", "encoders_dir", "output_dir",
                 "inference_steps", "seed", "jobs", "codec_cmd"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    pgd_fields = {}
    for name in ("epsilon", "alpha", "iterations", "grad_repeats", "t_adv"):
        value = getattr(args, name, None)
        if value is not None:
            pgd_fields[name] = value
    if pgd_fields or "seed" in overrides:
        base = cfg.pgd.to_dict()
        base.update(pgd_fields)
        base["seed"] = overrides.get("seed", cfg.seed)
        overrides["pgd"] = PgdConfig(**base)
    weight_fields = {}
    for flag, name in (("lam_id", "lam_id"), ("lam_ctx", "lam_ctx"),
                       ("lam_score", "lam_score"), ("lam_sem", "lam_sem")):
        value = getattr(args, flag, None)
        if value is not None:
            weight_fields[name] = value
    if weight_fields:
        base = {"lam_id": cfg.weights.lam_id, "lam_ctx": cfg.weights.lam_ctx,
                "lam_score": cfg.weights.lam_score, "lam_sem": cfg.weights.lam_sem}
        base.update(weight_fields)
        overrides["weights"] = LossWeights(**base)
    thr_fields = {}
    for name in ("tau_asv", "tau_q"):
        value = getattr(args, name, None)
        if value is not None:
            thr_fields[name] = value
    if thr_fields:
        overrides["thresholds"] = DecisionThresholds(
            tau_asv=thr_fields.get("tau_asv", cfg.thresholds.tau_asv),
            tau_q=thr_fields.get("tau_q", cfg.thresholds.tau_q),
        )
    return cfg.with_overrides(**overrides)


def _require(cfg_value: str, what: str) -> str:
    if not cfg_value:
        raise UsageError(f"missing required {what} (flag or config field)")
    return cfg_value


def _load_model(cfg: ExperimentConfig) -> VoiceConverter:
    path = Path(_require(cfg.model_checkpoint, "--model-checkpoint"))
    if not path.exists():
        raise FileNotFoundError(f"model checkpoint not found: {path}")
    return VoiceConverter.load(path)


def _load_evaluator_bundle(cfg: ExperimentConfig) -> tuple[IdentityExtractor, Evaluators]:
    enc_dir = Path(_require(cfg.encoders_dir, "--encoders-dir"))
    for fname in ("defense.pt", "asv.pt", "quality.pt", "enrollment.json"):
        if not (enc_dir / fname).exists():
            raise FileNotFoundError(f"missing encoder artifact: {enc_dir / fname}")
    defense = IdentityExtractor.load(enc_dir / "defense.pt")
    asv = IdentityExtractor.load(enc_dir / "asv.pt")
    quality = QualityProxy.load(enc_dir / "quality.pt")
    enrollment = load_enrollment(enc_dir / "enrollment.json")
    return defense, Evaluators(asv=asv, quality=quality, enrollment=enrollment,
                               thresholds=cfg.thresholds)


def _write_protect_outputs(out_dir: Path, sample_id: str, state, cfg: ExperimentConfig) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    wav_path = out_dir / f"{sample_id}.wav"
    write_wav(wav_path, state.x_adv)
    trace = [b.to_dict() for b in state.trace]
    reporting.write_json(out_dir / f"{sample_id}.trace.json", {
        "schema_version": "voiceward-protect-trace-v1",
        "sample_id": sample_id,
        "config": cfg.to_dict(),
        "iterations": state.iterations_run,
        "trace": trace,
    })
    # wall-clock kept out of the deterministic JSON artifacts
    (out_dir / f"{sample_id}.timing.txt").write_text(f"wall_seconds {state.wall_seconds:.3f}\n")
    reporting.plot_loss_trace(out_dir / f"{sample_id}_loss.png", trace)
    return wav_path


# --------------------------------------------------------------------------- commands


def cmd_gen_corpus(args) -> int:
    specs = default_speaker_specs(args.speakers_per_class, seed=args.seed)
    manifest = synth_corpus(specs, args.utterances, args.out, duration=args.duration)
    print(f"corpus: {len(specs)} speakers x {args.utterances} utterances -> {manifest}")
    return 0


def cmd_train_model(args) -> int:
    cfg = _resolve_config(args)
    manifest = _require(cfg.corpus, "--corpus")
    model, history = train_score(
        manifest, epochs=args.epochs, seed=cfg.seed, hidden=args.hidden,
        batch_size=args.batch_size, crop_frames=args.crop_frames, lr=args.lr,
    )
    out = Path(args.out)
    model.save(out)
    reporting.write_json(out.with_suffix(".history.json"), {
        "initial_val_loss": history.initial_val_loss,
        "train_loss": history.train_loss,
        "val_loss": history.val_loss,
        "val_improvement": history.val_improvement(),
    })
    print(f"model saved to {out}; validation loss improvement "
          f"{100 * history.val_improvement():.1f}% over {args.epochs} epochs")
    return 0


def cmd_train_encoders(args) -> int:
    cfg = _resolve_config(args)
    manifest = _require(cfg.corpus, "--corpus")
    out_dir = Path(args.out_dir)
    defense, asv = train_extractors(manifest, seed=cfg.seed, steps=args.steps)
    quality = train_quality_proxy(manifest, seed=cfg.seed, steps=args.quality_steps)
    defense.save(out_dir / "defense.pt")
    asv.save(out_dir / "asv.pt")
    quality.save(out_dir / "quality.pt")
    save_enrollment(build_enrollment(manifest, asv), out_dir / "enrollment.json")
    print(f"encoders, quality proxy, and enrollment written to {out_dir}")
    return 0


def cmd_protect(args) -> int:
    cfg = _resolve_config(args)
    model = _load_model(cfg)
    defense, _ = _load_evaluator_bundle(cfg)
    manifest = _require(cfg.corpus, "--corpus")
    rows = load_manifest(manifest)
    matches = [r for r in rows if r.speaker_id == args.speaker]
    if not matches:
        raise UsageError(f"speaker {args.speaker!r} not in manifest")
    if not 0 <= args.utterance < len(matches):
        raise UsageError(f"utterance index {args.utterance} out of range (0..{len(matches) - 1})")
    target = matches[args.utterance]

    sample_id = args.name or f"{target.speaker_id}_u{args.utterance}_s{cfg.pgd.seed}"
    sample, state = protect_reference(manifest, target, model, defense, cfg.pgd, cfg.weights,
                                      sample_id=sample_id)
    out_dir = Path(cfg.output_dir)
    wav_path = _write_protect_outputs(out_dir, sample_id, state, cfg)
    write_wav(out_dir / f"{sample_id}.ref.wav", sample.x_ref)
    write_wav(out_dir / f"{sample_id}.src.wav", sample.x_src)
    final = state.trace[-1]
    print(f"protected {target.speaker_id} -> {wav_path}")
    print(f"final losses: total={final.l_total:.4f} id={final.l_id:.4f} "
          f"ctx={final.l_ctx:.4f} score={final.l_score:.4f} sem={final.l_sem:.4f}")
    print(f"max deviation {state.max_deviation(sample.x_ref):.6f} (budget {cfg.pgd.epsilon})")
    return 0


def cmd_clone(args) -> int:
    cfg = _resolve_config(args)
    model = _load_model(cfg)
    x_src = audio_mod.ingest(args.src)
    x_ref = audio_mod.ingest(args.ref)
    start = time.perf_counter()
    result = model.synthesize(x_src, x_ref, cfg.inference_steps, cfg.seed)
    elapsed = time.perf_counter() - start
    out = Path(args.out)
    write_wav(out, result.waveform_out)
    reporting.write_json(out.with_suffix(".json"), {
        "schema_version": "voiceward-clone-v1",
        "src": str(args.src),
        "ref": str(args.ref),
        "inference_steps": cfg.inference_steps,
        "seed": cfg.seed,
        "n_frames": result.mel_out.n_frames,
    })
    print(f"clone written to {out} ({cfg.inference_steps} steps, {elapsed:.2f}s)")
    return 0


def _read_eval_manifest(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"sample_id", "speaker_id", "x_ref", "x_adv", "y", "y_adv"}
        if not required.issubset(set(reader.fieldnames or [])):
            raise UsageError(
                f"evaluation manifest needs columns {sorted(required)}, got {reader.fieldnames}"
            )
        return list(reader)


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    _, evaluators = _load_evaluator_bundle(cfg)
    manifest_path = Path(args.manifest)
    records = _read_eval_manifest(manifest_path)
    if not records:
        raise RuntimeError("no samples in evaluation manifest")

    def _evaluate(rec: dict) -> SampleMetrics | None:
        paths = {k: manifest_path.parent / rec[k] for k in ("x_ref", "x_adv", "y", "y_adv")}
        missing = [str(p) for p in paths.values() if not p.exists()]
        if missing:
            log.warning("skipping %s: missing %s", rec["sample_id"], ", ".join(missing))
            return None
        x_ref = audio_mod.ingest(paths["x_ref"])
        x_adv = audio_mod.ingest(paths["x_adv"])
        y = audio_mod.ingest(paths["y"])
        y_adv = audio_mod.ingest(paths["y_adv"])
        enrollment = np.asarray(evaluators.enrollment[rec["speaker_id"]]["embedding"])
        asv_score = cosine_similarity(evaluators.asv.embed_waveform(y_adv), enrollment)
        quality = evaluators.quality.predict(y_adv)
        return SampleMetrics(
            sample_id=rec["sample_id"],
            asv_score=asv_score,
            quality=quality,
            dtw=dtw_distance(mel_spectrogram(y), mel_spectrogram(y_adv)),
            ssim=spectrogram_ssim(y, y_adv),
            mcd=mcd(x_ref, x_adv),
            snr=snr_db(x_ref.samples, x_adv.samples) if len(x_ref.samples) == len(x_adv.samples)
            else float("nan"),
            success=defense_success(asv_score, quality, evaluators.thresholds),
        )

    results = parallel_map(_evaluate, records, cfg.jobs)
    samples = [r for r in results if r is not None]
    skipped = len(results) - len(samples)
    if not samples:
        raise RuntimeError("no samples could be evaluated (all rows skipped)")
    aggregates = aggregate_cells(samples, evaluators.thresholds)
    out_dir = Path(cfg.output_dir)
    json_path, csv_path = reporting.write_defense_report(
        out_dir, "evaluation", samples, aggregates, cfg.to_dict(), skipped)
    reporting.plot_threshold_scatter(out_dir / "evaluation_scatter.png", samples,
                                     evaluators.thresholds.tau_asv, evaluators.thresholds.tau_q)
    print(f"evaluated {len(samples)} samples ({skipped} skipped) -> {json_path}")
    print(f"aggregates: ASV rate {aggregates['asv_rate']:.2%}, DSR {aggregates['dsr']:.2%}")
    return 0


def _protect_batch(cfg: ExperimentConfig, model, defense, n_samples: int,
                   pgd_base: PgdConfig | None = None) -> list[tuple[ProtectedSample, float]]:
    manifest = _require(cfg.corpus, "--corpus")
    rows = load_manifest(manifest)
    rng = np.random.default_rng(cfg.seed)
    targets = select_reference_rows(rows, n_samples, rng)
    base = pgd_base or cfg.pgd

    def _one(pair):
        i, target = pair
        run_cfg = PgdConfig(**{**base.to_dict(), "seed": cfg.seed + 101 * i})
        sample, state = protect_reference(manifest, target, model, defense, run_cfg, cfg.weights,
                                          sample_id=f"{target.speaker_id}_{i}")
        return sample, state.wall_seconds

    return parallel_map(_one, list(enumerate(targets)), cfg.jobs)


def cmd_robustness(args) -> int:
    cfg = _resolve_config(args)
    model = _load_model(cfg)
    defense, evaluators = _load_evaluator_bundle(cfg)
    if args.transforms == "all":
        transforms = default_transform_grid()
    else:
        transforms = [parse_transform(s) for s in args.transforms.split(",") if s.strip()]
    protected = [s for s, _ in _protect_batch(cfg, model, defense, args.n_samples)]
    rows = robustness_sweep(protected, transforms, model, evaluators,
                            inference_steps=cfg.inference_steps, seed=cfg.seed,
                            codec_cmd=cfg.codec_cmd or None)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(out_dir / "robustness.csv", rows, ROBUSTNESS_COLUMNS)
    reporting.plot_robustness(out_dir / "robustness.png", rows)
    reporting.write_json(out_dir / "robustness.json", {
        "schema_version": "voiceward-robustness-v1",
        "config": cfg.to_dict(),
        "rows": rows,
    })
    print(f"robustness sweep over {len(transforms)} transforms x {args.n_samples} samples "
          f"-> {out_dir / 'robustness.csv'}")
    return 0


def _parse_values(axis: str, raw: str) -> list[float]:
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse --values {raw!r}: {exc}") from exc
    if not values:
        raise UsageError("--values must be a nonempty comma-separated list")
    if axis in ("inference_steps", "pgd_iters") and any(v != int(v) or v < 1 for v in values):
        raise UsageError(f"{axis} values must be positive integers")
    if axis == "epsilon" and any(v <= 0 for v in values):
        raise UsageError("epsilon values must be positive")
    return values


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    if args.axis not in ("epsilon", "inference_steps", "pgd_iters"):
        raise UsageError(f"unknown ablation axis {args.axis!r}")
    values = _parse_values(args.axis, args.values)
    model = _load_model(cfg)
    defense, evaluators = _load_evaluator_bundle(cfg)

    table: list[dict] = []
    if args.axis == "inference_steps":
        # perturbation is fixed; only the attacker's sampling budget varies
        protected = _protect_batch(cfg, model, defense, args.n_samples)
        protect_mean = float(np.mean([w for _, w in protected]))
        for value in values:
            row = _ablate_clone_row(cfg, model, evaluators, [s for s, _ in protected], int(value))
            row.update({"axis": args.axis, "value": value,
                        "protect_seconds_mean": protect_mean})
            table.append(row)
    else:
        for value in values:
            base = cfg.pgd.to_dict()
            if args.axis == "epsilon":
                # step size keeps its ratio to the budget so every budget is reachable
                base["alpha"] = cfg.pgd.alpha * (value / cfg.pgd.epsilon)
                base["epsilon"] = value
            else:
                base["iterations"] = int(value)
            try:
                protected = _protect_batch(cfg, model, defense, args.n_samples,
                                           pgd_base=PgdConfig(**base))
                protect_mean = float(np.mean([w for _, w in protected]))
                row = _ablate_clone_row(cfg, model, evaluators, [s for s, _ in protected],
                                        cfg.inference_steps)
                row.update({"axis": args.axis, "value": value,
                            "protect_seconds_mean": protect_mean})
            except Exception as exc:  # noqa: BLE001 - per-value failures recorded, sweep continues
                log.warning("ablation value %s failed: %s", value, exc)
                row = {"axis": args.axis, "value": value, "failures": 1}
            table.append(row)

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"ablate_{args.axis}.csv"
    reporting.write_csv(csv_path, table, ABLATE_COLUMNS)
    ok_rows = [r for r in table if "dsr" in r]
    if ok_rows:
        reporting.plot_trend_grid(
            out_dir / f"ablate_{args.axis}.png",
            [r["value"] for r in ok_rows],
            {m: [r[m] for r in ok_rows] for m in ("asv_rate", "quality", "dsr", "snr")},
            xlabel=args.axis,
            logx=args.axis == "epsilon",
        )
    print(f"ablation over {args.axis} ({len(values)} values) -> {csv_path}")
    return 0


def _ablate_clone_row(cfg, model, evaluators, samples: list[ProtectedSample],
                      inference_steps: int) -> dict:
    cells, clone_times, failures = [], [], 0

    def _one(pair):
        i, sample = pair
        start = time.perf_counter()
        cell = evaluate_clone_pair(sample, sample.x_adv, model, evaluators,
                                   inference_steps=inference_steps, seed=cfg.seed + i)
        return cell, time.perf_counter() - start

    for pair in enumerate(samples):
        try:
            cell, elapsed = _one(pair)
            cells.append(cell)
            clone_times.append(elapsed)
        except Exception as exc:  # noqa: BLE001
            failures += 1
            log.warning("clone/evaluate failed for %s: %s", pair[1].sample_id, exc)
    row = aggregate_cells(cells, evaluators.thresholds)
    row["clone_seconds_mean"] = float(np.mean(clone_times)) if clone_times else float("nan")
    row["failures"] = failures
    return row


def cmd_baseline_noise(args) -> int:
    cfg = _resolve_config(args)
    if args.epsilon is not None and args.epsilon < 0:
        raise UsageError("epsilon must be nonnegative")
    x_ref = audio_mod.ingest(args.ref)
    epsilon = args.epsilon if args.epsilon is not None else cfg.pgd.epsilon
    noisy = random_noise_baseline(x_ref, epsilon, seed=cfg.seed)
    out = Path(args.out)
    write_wav(out, noisy)
    reporting.write_json(out.with_suffix(".json"), {
        "schema_version": "voiceward-baseline-noise-v1",
        "ref": str(args.ref),
        "epsilon": epsilon,
        "seed": cfg.seed,
        "snr_db": snr_db(x_ref.samples, noisy.samples),
    })
    print(f"random-noise baseline written to {out}")
    return 0


# --------------------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallelize independent samples")


def _add_pgd_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--grad-repeats", dest="grad_repeats", type=int, default=None)
    p.add_argument("--t-adv", dest="t_adv", type=int, default=None)
    p.add_argument("--lam-id", dest="lam_id", type=float, default=None)
    p.add_argument("--lam-ctx", dest="lam_ctx", type=float, default=None)
    p.add_argument("--lam-score", dest="lam_score", type=float, default=None)
    p.add_argument("--lam-sem", dest="lam_sem", type=float, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="voiceward", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic multi-speaker corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers-per-class", type=int, default=3)
    p.add_argument("--utterances", type=int, default=8)
    p.add_argument("--duration", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("train-model", help="train the diffusion VC model")
    _add_common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--crop-frames", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.set_defaults(fn=cmd_train_model)

    p = sub.add_parser("train-encoders", help="train identity encoders, quality proxy, enrollment")
    _add_common(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=150)
    p.add_argument("--quality-steps", type=int, default=300)
    p.set_defaults(fn=cmd_train_encoders)

    p = sub.add_parser("protect", help="optimize a protective perturbation for one reference")
    _add_common(p)
    _add_pgd_flags(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--model-checkpoint", default=None)
    p.add_argument("--encoders-dir", default=None)
    p.add_argument("--speaker", required=True)
    p.add_argument("--utterance", type=int, default=0)
    p.add_argument("--name", default=None, help="output artifact stem")
    p.set_defaults(fn=cmd_protect)

    p = sub.add_parser("clone", help="synthesize a voice-converted clone")
    _add_common(p)
    p.add_argument("--model-checkpoint", default=None)
    p.add_argument("--src", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inference-steps", dest="inference_steps", type=int, default=None)
    p.set_defaults(fn=cmd_clone)

    p = sub.add_parser("evaluate", help="score clone pairs listed in an evaluation manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--encoders-dir", default=None)
    p.add_argument("--tau-asv", dest="tau_asv", type=float, default=None)
    p.add_argument("--tau-q", dest="tau_q", type=float, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("robustness", help="lossy-channel sweep over protected samples")
    _add_common(p)
    _add_pgd_flags(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--model-checkpoint", default=None)
    p.add_argument("--encoders-dir", default=None)
    p.add_argument("--n-samples", type=int, default=4)
    p.add_argument("--transforms", default="all", help='"all" or comma list like gaussian_noise:30,lowpass:7000')
    p.add_argument("--inference-steps", dest="inference_steps", type=int, default=None)
    p.add_argument("--codec-cmd", dest="codec_cmd", default=None)
    p.set_defaults(fn=cmd_robustness)

    p = sub.add_parser("ablate", help="sweep epsilon, inference steps, or PGD iterations")
    _add_common(p)
    _add_pgd_flags(p)
    p.add_argument("--corpus", default=None)
    p.add_argument("--model-checkpoint", default=None)
    p.add_argument("--encoders-dir", default=None)
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--n-samples", type=int, default=4)
    p.add_argument("--inference-steps", dest="inference_steps", type=int, default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("baseline-noise", help="random-noise baseline at the same budget")
    _add_common(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(fn=cmd_baseline_noise)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (PgdConfigError, ConfigError, CorpusError, TransformError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
