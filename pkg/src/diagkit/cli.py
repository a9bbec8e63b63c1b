"""Command line entry point wiring all modules into subcommands.

Every invocation writes its outputs plus a run manifest beside them. Exit
codes: 0 success, 1 validation failure, 2 runtime error, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import jsonl
from .claims import ScoringConfig
from .confidence import ConfidenceReport, score_reasoning
from .criteria import load_criteria, silver_label
from .datasets import Dialogue, load_dialogues, resolve_gold
from .egdr import DiagnosticHypothesis, PromptingMode, run_baseline, run_egdr
from .errors import (
    DiagkitError,
    DomainError,
    EmptyInput,
    IntegrityError,
    MissingScore,
    ParseError,
    SchemaError,
    UsageError,
)
from .evalharness import (
    PredictionRecord,
    ReportBundle,
    ScoredCase,
    ablation_sweep,
    compute_metrics,
    dcs_by_correctness,
    emit_report,
    subgroup_accuracy,
)
from .kgstore import load_kg
from .providers import LocalHashEmbedder, RemoteChatProvider, StubChatProvider
from .templates import DEFAULT_TEMPLATE_VERSION

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64

_VALIDATION_ERRORS = (ParseError, IntegrityError, SchemaError, DomainError, EmptyInput, MissingScore)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    outputs: dict
    started_at: str
    finished_at: str
    processed: int
    failed: int

    def write(self, path: Path) -> None:
        record = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "counts": {"processed": self.processed, "failed": self.failed},
        }
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _manifest_path(out: Path) -> Path:
    if out.suffix:
        return out.with_name(out.name + ".manifest.json")
    return out / "manifest.json"


def _config_from_args(args) -> ScoringConfig:
    return ScoringConfig(
        alpha=getattr(args, "alpha", 0.5),
        lambda_=getattr(args, "lambda_", 0.75),
        retrieval_budget=getattr(args, "budget", 32),
        seed=getattr(args, "seed", 0),
        template_version=getattr(args, "template_version", DEFAULT_TEMPLATE_VERSION),
        max_concurrency=getattr(args, "max_concurrency", 4),
        model=getattr(args, "model", "default"),
    )


def _config_snapshot(args, config: ScoringConfig) -> dict:
    return {
        "alpha": config.alpha,
        "lambda": config.lambda_,
        "budget": config.retrieval_budget,
        "seed": config.seed,
        "template_version": config.template_version,
        "max_concurrency": config.max_concurrency,
        "provider": getattr(args, "provider", None),
        "model": config.model,
        "mode": getattr(args, "mode", None),
    }


def _chat_provider(args, config: ScoringConfig):
    kind = getattr(args, "provider", "none") or "none"
    if kind == "none":
        return None
    if kind == "stub":
        scripts = getattr(args, "scripts", None)
        if not scripts:
            raise UsageError("--provider stub requires --scripts")
        return StubChatProvider.from_file(scripts)
    if kind == "remote":
        return RemoteChatProvider(
            retry_limit=config.retry_limit,
            max_concurrency=config.max_concurrency,
        )
    raise UsageError(f"unknown provider '{kind}'")


def _run_parallel(items, worker, max_concurrency: int):
    """Apply worker over items preserving order; collect per-item failures."""
    results = []
    failures = []

    def safe(item):
        try:
            return worker(item), None
        except DiagkitError as exc:
            return None, exc

    if max_concurrency > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            outcomes = list(pool.map(safe, items))
    else:
        outcomes = [safe(item) for item in items]
    for item, (value, error) in zip(items, outcomes):
        if error is not None:
            failures.append((item, error))
        else:
            results.append(value)
    return results, failures


# subcommand handlers -------------------------------------------------------


def _cmd_kg(args) -> int:
    if args.kg_command != "validate":
        raise UsageError(f"unknown kg subcommand '{args.kg_command}'")
    kg = load_kg(args.kg)
    by_kind: dict[str, int] = {}
    for entity in kg.entities.values():
        by_kind[entity.kind.value] = by_kind.get(entity.kind.value, 0) + 1
    kinds = ", ".join(f"{kind}={count}" for kind, count in sorted(by_kind.items()))
    print(f"ok: {len(kg.entities)} entities ({kinds}), {len(kg.triplets)} triplets")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    started = _now()
    kg = load_kg(args.kg)
    criteria_map = load_criteria(args.criteria, kg)
    corpus = load_dialogues(args.corpus)
    config = _config_from_args(args)
    provider = _chat_provider(args, config)
    if provider is None:
        raise UsageError("diagnose requires --provider stub or --provider remote")
    mode = PromptingMode(args.mode)

    def work(dialogue: Dialogue) -> dict:
        if mode is PromptingMode.EGDR:
            hypothesis = run_egdr(dialogue, provider, kg, criteria_map, config)
        else:
            hypothesis = run_baseline(dialogue, provider, kg, criteria_map, mode, config)
        return hypothesis.to_record()

    records, failures = _run_parallel(corpus, work, config.max_concurrency)
    for dialogue, error in failures:
        print(f"diagnose failed for '{dialogue.id}': {error}", file=sys.stderr)

    out = Path(args.out)
    jsonl.write_records(out, sorted(records, key=lambda r: r["dialogue_id"]))
    RunManifest(
        command="diagnose",
        config=_config_snapshot(args, config),
        inputs={"kg": args.kg, "criteria": args.criteria, "corpus": args.corpus},
        outputs={"hypotheses": str(out)},
        started_at=started,
        finished_at=_now(),
        processed=len(records),
        failed=len(failures),
    ).write(_manifest_path(out))
    return EXIT_OK if not failures else EXIT_RUNTIME


def _cmd_score(args) -> int:
    started = _now()
    kg = load_kg(args.kg)
    criteria_map = load_criteria(args.criteria, kg)
    hypotheses = [DiagnosticHypothesis.from_record(r) for r in jsonl.read_records(args.hypotheses)]
    config = _config_from_args(args)
    provider = _chat_provider(args, config)
    embedder = LocalHashEmbedder()

    def work(hypothesis: DiagnosticHypothesis) -> dict:
        report = score_reasoning(hypothesis, kg, criteria_map, config, provider, embedder)
        return report.to_record()

    records, failures = _run_parallel(hypotheses, work, config.max_concurrency)
    for hypothesis, error in failures:
        print(f"score failed for '{hypothesis.dialogue_id}': {error}", file=sys.stderr)

    out = Path(args.out)
    jsonl.write_records(out, sorted(records, key=lambda r: r["dialogue_id"]))
    RunManifest(
        command="score",
        config=_config_snapshot(args, config),
        inputs={"kg": args.kg, "criteria": args.criteria, "hypotheses": args.hypotheses},
        outputs={"scores": str(out)},
        started_at=started,
        finished_at=_now(),
        processed=len(records),
        failed=len(failures),
    ).write(_manifest_path(out))
    return EXIT_OK if not failures else EXIT_RUNTIME


def _cmd_label(args) -> int:
    started = _now()
    kg = load_kg(args.kg)
    criteria_map = load_criteria(args.criteria, kg)
    corpus = load_dialogues(args.corpus)
    config = _config_from_args(args)
    provider = _chat_provider(args, config)

    def work(dialogue: Dialogue) -> dict:
        if provider is not None:
            hypothesis = run_baseline(
                dialogue, provider, kg, criteria_map, PromptingMode.DIRECT, config
            )
            label = hypothesis.final_diagnosis
        else:
            symptoms, exclusions, duration = resolve_gold(kg, dialogue)
            label = silver_label(criteria_map, kg, symptoms, exclusions, duration)
        return {"dialogue_id": dialogue.id, "label": label}

    records, failures = _run_parallel(corpus, work, config.max_concurrency)
    for dialogue, error in failures:
        print(f"label failed for '{dialogue.id}': {error}", file=sys.stderr)

    out = Path(args.out)
    jsonl.write_records(out, sorted(records, key=lambda r: r["dialogue_id"]))
    RunManifest(
        command="label",
        config=_config_snapshot(args, config),
        inputs={"kg": args.kg, "criteria": args.criteria, "corpus": args.corpus},
        outputs={"labels": str(out)},
        started_at=started,
        finished_at=_now(),
        processed=len(records),
        failed=len(failures),
    ).write(_manifest_path(out))
    return EXIT_OK if not failures else EXIT_RUNTIME


def _references(corpus: list[Dialogue], labels_path: str | None) -> dict[str, str]:
    if labels_path:
        return {r["dialogue_id"]: r["label"] for r in jsonl.read_records(labels_path)}
    refs = {}
    for dialogue in corpus:
        if dialogue.silver_label is None:
            raise SchemaError(
                f"dialogue '{dialogue.id}' has no silver_label; pass --labels or label the corpus first"
            )
        refs[dialogue.id] = dialogue.silver_label
    return refs


def _prediction_records(
    corpus: list[Dialogue],
    hypotheses: list[dict],
    references: dict[str, str],
    scores: dict[str, dict] | None,
) -> list[PredictionRecord]:
    by_id = {d.id: d for d in corpus}
    records = []
    for record in hypotheses:
        dialogue_id = record["dialogue_id"]
        dialogue = by_id.get(dialogue_id)
        if dialogue is None or dialogue_id not in references:
            raise SchemaError(f"hypothesis for unknown dialogue '{dialogue_id}'")
        dcs = None
        if scores is not None:
            score = scores.get(dialogue_id)
            dcs = score["dcs"] if score else None
        records.append(
            PredictionRecord(
                dialogue_id=dialogue_id,
                predicted=record.get("final_diagnosis") or "",
                reference=references[dialogue_id],
                dcs=dcs,
                prompting_mode=record.get("prompting_mode"),
                age_years=dialogue.age_years,
                gender=dialogue.gender,
            )
        )
    return records


def _parse_formats(raw: str) -> set[str]:
    return {part.strip() for part in raw.split(",") if part.strip()}


def _cmd_eval(args) -> int:
    started = _now()
    corpus = load_dialogues(args.corpus)
    hypotheses = jsonl.read_records(args.hypotheses)
    references = _references(corpus, args.labels)
    scores = None
    if args.scores:
        scores = {r["dialogue_id"]: r for r in jsonl.read_records(args.scores)}
    records = _prediction_records(corpus, hypotheses, references, scores)

    metrics = compute_metrics(records)
    bundle = ReportBundle(
        metrics=metrics,
        subgroups=subgroup_accuracy(records),
        metadata=_config_snapshot(args, _config_from_args(args)),
    )
    if scores is not None:
        bundle.dcs_summary = dcs_by_correctness(records)
    out = Path(args.out)
    manifest_files = emit_report(bundle, out, _parse_formats(args.formats))
    print(
        f"accuracy={metrics.accuracy:.4f} precision={metrics.precision:.4f} "
        f"recall={metrics.recall:.4f} f1={metrics.f1:.4f} n={metrics.total}"
    )
    RunManifest(
        command="eval",
        config=_config_snapshot(args, _config_from_args(args)),
        inputs={
            "corpus": args.corpus,
            "hypotheses": args.hypotheses,
            "scores": args.scores,
            "labels": args.labels,
        },
        outputs={"report_files": [str(p) for p in manifest_files]},
        started_at=started,
        finished_at=_now(),
        processed=len(records),
        failed=0,
    ).write(_manifest_path(out))
    return EXIT_OK


def _parse_grid(raw: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"bad grid '{raw}': {exc}") from exc


def _cmd_ablate(args) -> int:
    started = _now()
    reports = [ConfidenceReport.from_record(r) for r in jsonl.read_records(args.scores)]
    cases = [ScoredCase.from_report(r) for r in reports]
    rows = ablation_sweep(
        cases,
        alpha_grid=_parse_grid(args.alpha_grid),
        lambda_grid=_parse_grid(args.lambda_grid),
        default_alpha=args.alpha,
        default_lambda=args.lambda_,
    )
    bundle = ReportBundle(
        ablation=rows,
        metadata={
            "default_alpha": args.alpha,
            "default_lambda": args.lambda_,
            "note": "attribution labels held fixed across the alpha grid; "
            "match scores and aggregates recomputed from cached components",
        },
    )
    out = Path(args.out)
    manifest_files = emit_report(bundle, out, _parse_formats(args.formats))
    for row in rows:
        print(
            f"{row.parameter}={row.value:g} mean={row.mean:.4f} std={row.std_dev:.4f} "
            f"median={row.median:.4f}"
        )
    RunManifest(
        command="ablate",
        config={"alpha": args.alpha, "lambda": args.lambda_},
        inputs={"scores": args.scores},
        outputs={"report_files": [str(p) for p in manifest_files]},
        started_at=started,
        finished_at=_now(),
        processed=len(cases),
        failed=0,
    ).write(_manifest_path(out))
    return EXIT_OK


def _cmd_report(args) -> int:
    started = _now()
    corpus = load_dialogues(args.corpus)
    references = _references(corpus, args.labels)
    score_records = jsonl.read_records(args.scores)
    scores = {r["dialogue_id"]: r for r in score_records}
    hypotheses = [
        {
            "dialogue_id": r["dialogue_id"],
            "final_diagnosis": r["diagnosis"],
            "prompting_mode": None,
        }
        for r in score_records
    ]
    records = _prediction_records(corpus, hypotheses, references, scores)

    summary = dcs_by_correctness(records)
    values: dict[str, list[float]] = {"correct": [], "incorrect": []}
    for record in records:
        key = "correct" if record.predicted == record.reference else "incorrect"
        values[key].append(float(record.dcs))

    bundle = ReportBundle(
        metrics=compute_metrics(records),
        subgroups=subgroup_accuracy(records),
        dcs_summary=summary,
        dcs_values=values,
        metadata={"scores": args.scores, "corpus": args.corpus},
    )
    out = Path(args.out)
    manifest_files = emit_report(bundle, out, _parse_formats(args.formats))
    for path in manifest_files:
        print(f"wrote {path}")
    RunManifest(
        command="report",
        config={},
        inputs={"scores": args.scores, "corpus": args.corpus, "labels": args.labels},
        outputs={"report_files": [str(p) for p in manifest_files]},
        started_at=started,
        finished_at=_now(),
        processed=len(records),
        failed=0,
    ).write(_manifest_path(out))
    return EXIT_OK


# parser --------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, *names: str) -> None:
    if "kg" in names:
        parser.add_argument("--kg", required=True, help="knowledge graph jsonl file")
    if "criteria" in names:
        parser.add_argument("--criteria", required=True, help="criteria jsonl file")
    if "corpus" in names:
        parser.add_argument("--corpus", required=True, help="dialogue corpus jsonl file")
    if "out" in names:
        parser.add_argument("--out", required=True, help="output path")
    if "provider" in names:
        parser.add_argument(
            "--provider",
            choices=["none", "stub", "remote"],
            default="none",
            help="chat backend (default none: deterministic fallbacks)",
        )
        parser.add_argument("--scripts", help="stub script jsonl file")
        parser.add_argument("--model", default="default", help="remote model name")
    if "config" in names:
        parser.add_argument("--alpha", type=float, default=0.5)
        parser.add_argument("--lambda", dest="lambda_", type=float, default=0.75)
        parser.add_argument("--budget", type=int, default=32, help="retrieval budget")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--template-version", default=DEFAULT_TEMPLATE_VERSION)
        parser.add_argument("--max-concurrency", type=int, default=4)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diagkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    kg_parser = sub.add_parser("kg", help="knowledge graph utilities")
    kg_sub = kg_parser.add_subparsers(dest="kg_command", required=True)
    kg_validate = kg_sub.add_parser("validate", help="load and validate a graph file")
    kg_validate.add_argument("--kg", required=True)
    kg_parser.set_defaults(handler=_cmd_kg)

    diagnose = sub.add_parser("diagnose", help="run the diagnostic pipeline over a corpus")
    _add_common(diagnose, "kg", "criteria", "corpus", "out", "provider", "config")
    diagnose.add_argument("--mode", choices=["egdr", "direct", "cot"], default="egdr")
    diagnose.set_defaults(handler=_cmd_diagnose)

    score = sub.add_parser("score", help="verify hypotheses and emit confidence reports")
    _add_common(score, "kg", "criteria", "out", "provider", "config")
    score.add_argument("--hypotheses", required=True, help="hypotheses jsonl from diagnose")
    score.set_defaults(handler=_cmd_score)

    label = sub.add_parser("label", help="generate reference labels for a corpus")
    _add_common(label, "kg", "criteria", "corpus", "out", "provider", "config")
    label.set_defaults(handler=_cmd_label)

    eval_parser = sub.add_parser("eval", help="compute metrics against reference labels")
    _add_common(eval_parser, "corpus", "out", "config")
    eval_parser.add_argument("--hypotheses", required=True)
    eval_parser.add_argument("--scores", help="scores jsonl for confidence summaries")
    eval_parser.add_argument("--labels", help="labels jsonl overriding corpus silver labels")
    eval_parser.add_argument("--formats", default="json,csv")
    eval_parser.set_defaults(handler=_cmd_eval)

    ablate = sub.add_parser("ablate", help="sweep alpha and lambda over scored cases")
    ablate.add_argument("--scores", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--alpha-grid", default="0,0.25,0.5,0.75,1.0")
    ablate.add_argument("--lambda-grid", default="0,0.25,0.5,0.75,1.0")
    ablate.add_argument("--alpha", type=float, default=0.5)
    ablate.add_argument("--lambda", dest="lambda_", type=float, default=0.75)
    ablate.add_argument("--formats", default="json,csv")
    ablate.set_defaults(handler=_cmd_ablate)

    report = sub.add_parser("report", help="render metric tables and confidence figures")
    report.add_argument("--scores", required=True)
    report.add_argument("--corpus", required=True)
    report.add_argument("--labels")
    report.add_argument("--out", required=True)
    report.add_argument("--formats", default="json,csv,svg")
    report.set_defaults(handler=_cmd_report)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DiagkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
