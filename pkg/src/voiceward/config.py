"""Experiment configuration: JSON round-trip plus CLI flag overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .losses import LossWeights
from .metrics import DecisionThresholds
from .pgd import PgdConfig


class ConfigError(ValueError):
    """Malformed configuration file or invalid field values."""


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str = ""
    model_checkpoint: str = ""
    encoders_dir: str = ""
    output_dir: str = "out"
    pgd: PgdConfig = field(default_factory=PgdConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    thresholds: DecisionThresholds = field(default_factory=DecisionThresholds)
    inference_steps: int = 100
    seed: int = 0
    jobs: int = 1
    codec_cmd: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    try:
        return ExperimentConfig(
            corpus=raw.get("corpus", ""),
            model_checkpoint=raw.get("model_checkpoint", ""),
            encoders_dir=raw.get("encoders_dir", ""),
            output_dir=raw.get("output_dir", "out"),
            pgd=PgdConfig(**raw.get("pgd", {})),
            weights=LossWeights(**raw.get("weights", {})),
            thresholds=DecisionThresholds(**raw.get("thresholds", {})),
            inference_steps=raw.get("inference_steps", 100),
            seed=raw.get("seed", 0),
            jobs=raw.get("jobs", 1),
            codec_cmd=raw.get("codec_cmd", ""),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
