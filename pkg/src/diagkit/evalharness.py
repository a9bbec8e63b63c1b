"""Metrics, confidence-by-correctness summaries, subgroup accuracy, ablation sweeps.

All aggregation here is deterministic and permutation-invariant over record
order. emit_report is the only operation with side effects: it renders the
structured record, comma-separated tables, and fixed-layout histogram figures
to files and returns the written paths.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .claims import (
    AttributionLabel,
    claim_weight,
    kas_aggregate,
    triplet_match_score,
)
from .confidence import ConfidenceReport, diagnosis_confidence_score
from .datasets import AgeBucket, bucket_age
from .errors import DomainError, EmptyInput, MissingScore

HISTOGRAM_BINS = 20
SVG_HASHSALT = "diagkit"


@dataclass(frozen=True)
class PredictionRecord:
    dialogue_id: str
    predicted: str
    reference: str
    dcs: float | None = None
    prompting_mode: str | None = None
    age_years: int | None = None
    gender: str | None = None


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    # True when the class was never predicted, so its precision is reported
    # as 0 by declaration rather than computed.
    zero_predictions: bool


@dataclass(frozen=True)
class MetricsResult:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: tuple[ClassMetrics, ...]
    total: int

    def to_record(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "averaging": "support_weighted",
            "total": self.total,
            "per_class": [
                {
                    "label": c.label,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                    "zero_predictions": c.zero_predictions,
                }
                for c in self.per_class
            ],
        }


def compute_metrics(records: list[PredictionRecord]) -> MetricsResult:
    """Accuracy plus support-weighted precision/recall/F1 with a per-class table."""
    if not records:
        raise EmptyInput("no prediction records")
    labels = sorted({r.predicted for r in records} | {r.reference for r in records})
    correct = sum(1 for r in records if r.predicted == r.reference)
    total = len(records)

    per_class = []
    for label in labels:
        tp = sum(1 for r in records if r.predicted == label and r.reference == label)
        fp = sum(1 for r in records if r.predicted == label and r.reference != label)
        fn = sum(1 for r in records if r.predicted != label and r.reference == label)
        support = tp + fn
        zero_predictions = (tp + fp) == 0
        precision = 0.0 if zero_predictions else tp / (tp + fp)
        recall = 0.0 if support == 0 else tp / support
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        per_class.append(
            ClassMetrics(
                label=label,
                precision=precision,
                recall=recall,
                f1=f1,
                support=support,
                zero_predictions=zero_predictions,
            )
        )

    total_support = sum(c.support for c in per_class)
    def weighted(metric: str) -> float:
        if total_support == 0:
            return 0.0
        return sum(getattr(c, metric) * c.support for c in per_class) / total_support

    return MetricsResult(
        accuracy=correct / total,
        precision=weighted("precision"),
        recall=weighted("recall"),
        f1=weighted("f1"),
        per_class=tuple(per_class),
        total=total,
    )


def _summary_stats(values: list[float]) -> dict:
    array = np.asarray(sorted(values), dtype=np.float64)
    return {
        "mean": float(array.mean()),
        "median": float(np.quantile(array, 0.5)),
        "q25": float(np.quantile(array, 0.25)),
        "q75": float(np.quantile(array, 0.75)),
        "count": int(array.size),
    }


def dcs_by_correctness(records: list[PredictionRecord]) -> dict[str, dict]:
    """Summary statistics of the confidence score, split by prediction correctness."""
    missing = [r.dialogue_id for r in records if r.dcs is None]
    if missing:
        raise MissingScore(sorted(missing))
    buckets: dict[str, list[float]] = {"correct": [], "incorrect": []}
    for record in records:
        key = "correct" if record.predicted == record.reference else "incorrect"
        buckets[key].append(float(record.dcs))
    summary: dict[str, dict] = {}
    for key, values in buckets.items():
        if values:
            summary[key] = _summary_stats(values)
        else:
            summary[key] = {"mean": None, "median": None, "q25": None, "q75": None, "count": 0}
    return summary


def subgroup_accuracy(records: list[PredictionRecord]) -> list[dict]:
    """Per-demographic accuracy rows; groups with zero members are omitted and
    records with unknown demographics get their own row."""
    if not records:
        raise EmptyInput("no prediction records")

    rows: list[dict] = []
    age_groups: dict[str, list[PredictionRecord]] = {}
    for record in records:
        bucket = bucket_age(record.age_years)
        age_groups.setdefault(bucket.value, []).append(record)
    for bucket in AgeBucket:
        members = age_groups.get(bucket.value)
        if not members:
            continue
        correct = sum(1 for r in members if r.predicted == r.reference)
        rows.append(
            {
                "dimension": "age",
                "group": bucket.value,
                "accuracy": correct / len(members),
                "count": len(members),
            }
        )

    gender_groups: dict[str, list[PredictionRecord]] = {}
    for record in records:
        key = record.gender.strip().lower() if record.gender else "unknown"
        gender_groups.setdefault(key, []).append(record)
    for key in sorted(gender_groups):
        members = gender_groups[key]
        correct = sum(1 for r in members if r.predicted == r.reference)
        rows.append(
            {
                "dimension": "gender",
                "group": key,
                "accuracy": correct / len(members),
                "count": len(members),
            }
        )
    return rows


@dataclass(frozen=True)
class ScoredCase:
    """Cached per-claim components of one scored case, enough to recompute
    every downstream score without re-calling any provider."""

    claim_components: tuple[tuple[AttributionLabel, float, float], ...]  # (label, sim, epr)
    lcs: int

    @classmethod
    def from_report(cls, report: ConfidenceReport) -> "ScoredCase":
        return cls(
            claim_components=tuple((c.label, c.sim, c.epr) for c in report.claim_scores),
            lcs=report.lcs,
        )

    def kas_at(self, alpha: float) -> float:
        weights = [
            claim_weight(label, triplet_match_score(sim, epr, alpha))
            for label, sim, epr in self.claim_components
        ]
        return kas_aggregate(weights)


@dataclass(frozen=True)
class AblationStats:
    parameter: str
    value: float
    mean: float
    std_dev: float
    min: float
    q25: float
    median: float
    q75: float

    def to_record(self) -> dict:
        return {
            "parameter": self.parameter,
            "value": self.value,
            "mean": self.mean,
            "std_dev": self.std_dev,
            "min": self.min,
            "q25": self.q25,
            "median": self.median,
            "q75": self.q75,
        }


def _ablation_row(parameter: str, value: float, scores: list[float]) -> AblationStats:
    array = np.asarray(sorted(scores), dtype=np.float64)
    std = float(array.std(ddof=1)) if array.size > 1 else 0.0
    return AblationStats(
        parameter=parameter,
        value=value,
        mean=float(array.mean()),
        std_dev=std,
        min=float(array.min()),
        q25=float(np.quantile(array, 0.25)),
        median=float(np.quantile(array, 0.5)),
        q75=float(np.quantile(array, 0.75)),
    )


def ablation_sweep(
    cases: list[ScoredCase],
    alpha_grid: list[float],
    lambda_grid: list[float],
    default_alpha: float = 0.5,
    default_lambda: float = 0.75,
) -> list[AblationStats]:
    """Recompute score distributions over parameter grids from cached components.

    Attribution labels stay fixed across the alpha grid; only the match scores
    and their aggregation are recomputed. Lambda rows reuse the attribution
    score at the default alpha.
    """
    if not cases:
        raise EmptyInput("no scored cases")
    for grid_name, grid in (("alpha", alpha_grid), ("lambda", lambda_grid)):
        for value in grid:
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{grid_name} grid value {value} outside [0, 1]")

    rows: list[AblationStats] = []
    for alpha in alpha_grid:
        scores = [
            diagnosis_confidence_score(case.kas_at(alpha), case.lcs, default_lambda)
            for case in cases
        ]
        rows.append(_ablation_row("alpha", alpha, scores))

    kas_defaults = [case.kas_at(default_alpha) for case in cases]
    for lambda_ in lambda_grid:
        scores = [
            diagnosis_confidence_score(kas, case.lcs, lambda_)
            for kas, case in zip(kas_defaults, cases)
        ]
        rows.append(_ablation_row("lambda", lambda_, scores))
    return rows


@dataclass
class ReportBundle:
    """Everything the report writer may render; unset parts are skipped."""

    metrics: MetricsResult | None = None
    subgroups: list[dict] | None = None
    dcs_summary: dict | None = None
    dcs_values: dict[str, list[float]] | None = None
    ablation: list[AblationStats] | None = None
    metadata: dict = field(default_factory=dict)


def _write_histogram(path: Path, values: list[float], title: str) -> None:
    plt.rcParams["svg.hashsalt"] = SVG_HASHSALT
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(values, bins=HISTOGRAM_BINS, range=(0.0, 1.0), color="#4878a8", edgecolor="black")
    ax.set_xlabel("diagnosis confidence score")
    ax.set_ylabel("cases")
    ax.set_title(title)
    ax.set_xlim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(
    results: ReportBundle,
    out_dir: str | Path,
    formats: set[str] | frozenset[str] = frozenset({"json", "csv"}),
) -> list[Path]:
    """Write report files into out_dir and return the manifest of paths.

    Output is byte-stable for identical inputs: JSON keys are sorted, table
    row order is fixed, and the histogram figures carry no timestamps.
    """
    unknown = set(formats) - {"json", "csv", "svg"}
    if unknown:
        raise DomainError(f"unknown report formats: {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: list[Path] = []

    if "json" in formats:
        payload: dict = {"metadata": results.metadata}
        if results.metrics is not None:
            payload["metrics"] = results.metrics.to_record()
        if results.subgroups is not None:
            payload["subgroups"] = results.subgroups
        if results.dcs_summary is not None:
            payload["dcs_by_correctness"] = results.dcs_summary
        if results.ablation is not None:
            payload["ablation"] = [row.to_record() for row in results.ablation]
        path = out / "report.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        manifest.append(path)

    if "csv" in formats:
        if results.metrics is not None:
            path = out / "per_class.csv"
            with path.open("w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle)
                writer.writerow(["label", "precision", "recall", "f1", "support", "zero_predictions"])
                for c in results.metrics.per_class:
                    writer.writerow([c.label, c.precision, c.recall, c.f1, c.support, c.zero_predictions])
            manifest.append(path)
        if results.subgroups is not None:
            path = out / "subgroups.csv"
            with path.open("w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle)
                writer.writerow(["dimension", "group", "accuracy", "count"])
                for row in results.subgroups:
                    writer.writerow([row["dimension"], row["group"], row["accuracy"], row["count"]])
            manifest.append(path)
        if results.ablation is not None:
            path = out / "ablation.csv"
            with path.open("w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle)
                writer.writerow(["parameter", "value", "mean", "std_dev", "min", "q25", "median", "q75"])
                for row in results.ablation:
                    writer.writerow(
                        [row.parameter, row.value, row.mean, row.std_dev, row.min, row.q25, row.median, row.q75]
                    )
            manifest.append(path)

    if "svg" in formats and results.dcs_values is not None:
        for bucket in ("correct", "incorrect"):
            values = results.dcs_values.get(bucket, [])
            path = out / f"dcs_{bucket}.svg"
            _write_histogram(path, sorted(values), f"DCS distribution ({bucket} cases)")
            manifest.append(path)

    return manifest
