"""Report emission: versioned JSON, delimited tables, and trend figures.

Every report embeds the resolved configuration verbatim. Figures are
rendered to static PNG files next to the CSVs they illustrate. Non-finite
metric values are serialized as "clean" (+inf SNR means no perturbation)
or null so the JSON stays standards-compliant.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PESQ_PLACEHOLDER, SampleMetrics  # noqa: E402

REPORT_SCHEMA = "voiceward-defense-report-v1"

AGGREGATE_COLUMNS = ["dtw", "asv_rate", "ssim", "quality", "dsr", "pesq", "mcd", "snr"]


def sanitize(value):
    """Make a value JSON-safe: inf -> "clean", nan -> None, recursively."""
    if isinstance(value, float):
        if math.isinf(value):
            return "clean" if value > 0 else "-inf"
        if math.isnan(value):
            return None
        return value
    if isinstance(value, dict):
        return {k: sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    return value


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(sanitize(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: str | Path, rows: list[dict], columns: list[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: sanitize(v) for k, v in row.items()})


def defense_report_payload(
    samples: list[SampleMetrics], aggregates: dict, config: dict, skipped: int = 0
) -> dict:
    return {
        "schema_version": REPORT_SCHEMA,
        "config": config,
        "samples": [s.to_dict() for s in samples],
        "aggregates": {**aggregates, "pesq": PESQ_PLACEHOLDER},
        "skipped_rows": skipped,
    }


def write_defense_report(
    out_dir: str | Path,
    name: str,
    samples: list[SampleMetrics],
    aggregates: dict,
    config: dict,
    skipped: int = 0,
) -> tuple[Path, Path]:
    """JSON report plus per-sample and aggregate CSVs; returns (json, csv) paths."""
    out_dir = Path(out_dir)
    json_path = out_dir / f"{name}.json"
    write_json(json_path, defense_report_payload(samples, aggregates, config, skipped))

    sample_columns = ["sample_id", "asv_score", "quality", "dtw", "ssim", "mcd", "snr", "pesq", "success"]
    write_csv(out_dir / f"{name}_samples.csv", [s.to_dict() for s in samples], sample_columns)

    agg_row = {**aggregates, "pesq": PESQ_PLACEHOLDER}
    csv_path = out_dir / f"{name}_aggregate.csv"
    write_csv(csv_path, [agg_row], ["n_samples"] + AGGREGATE_COLUMNS)
    return json_path, csv_path


def plot_threshold_scatter(
    path: str | Path, samples: list[SampleMetrics], tau_asv: float, tau_q: float
) -> None:
    """ASV-vs-quality scatter with the success region marked."""
    fig, ax = plt.subplots(figsize=(5, 4))
    xs = [s.asv_score for s in samples]
    ys = [s.quality for s in samples]
    wins = [s.success for s in samples]
    ax.scatter([x for x, w in zip(xs, wins) if w], [y for y, w in zip(ys, wins) if w],
               c="tab:green", label="defense success", s=24)
    ax.scatter([x for x, w in zip(xs, wins) if not w], [y for y, w in zip(ys, wins) if not w],
               c="tab:red", label="defense failure", s=24)
    ax.axvline(tau_asv, ls="--", c="gray")
    ax.axhline(tau_q, ls="--", c="gray")
    ax.set_xlabel("ASV cosine score")
    ax.set_ylabel("quality score")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trend_grid(
    path: str | Path,
    x_values: list,
    series: dict[str, list[float]],
    xlabel: str,
    logx: bool = False,
) -> None:
    """2x2 grid of metric trends against a sweep axis."""
    names = list(series)
    rows = (len(names) + 1) // 2
    fig, axes = plt.subplots(rows, 2, figsize=(8, 3 * rows), squeeze=False)
    for i, name in enumerate(names):
        ax = axes[i // 2][i % 2]
        ax.plot(x_values, series[name], marker="o")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(name)
        if logx:
            ax.set_xscale("log")
        ax.grid(alpha=0.3)
    for j in range(len(names), rows * 2):
        axes[j // 2][j % 2].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_robustness(path: str | Path, rows: list[dict]) -> None:
    """Per-transform severity trends for the robustness sweep table."""
    kinds = sorted({r["lossy_type"] for r in rows if r["lossy_type"] != "none"})
    metrics = ["dtw", "asv_rate", "quality", "dsr"]
    fig, axes = plt.subplots(len(metrics), 1, figsize=(6, 2.4 * len(metrics)), squeeze=False)
    baseline = next((r for r in rows if r["lossy_type"] == "none"), None)
    for i, metric in enumerate(metrics):
        ax = axes[i][0]
        for kind in kinds:
            pts = [(r["level"], r[metric]) for r in rows if r["lossy_type"] == kind]
            pts.sort(key=lambda p: p[0])
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=kind)
        if baseline is not None and isinstance(baseline.get(metric), float) and math.isfinite(baseline[metric]):
            ax.axhline(baseline[metric], ls="--", c="gray", label="untransformed")
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3)
        if i == 0:
            ax.legend(fontsize=7)
    axes[-1][0].set_xlabel("severity level (kind-specific units)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_trace(path: str | Path, trace: list[dict]) -> None:
    """Per-iteration objective components from a protection run."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    iters = list(range(1, len(trace) + 1))
    for key in ("l_total", "l_id", "l_ctx", "l_score", "l_sem"):
        ax.plot(iters, [row[key] for row in trace], label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
