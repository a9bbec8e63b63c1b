"""Executable diagnostic criteria: symptom thresholds, core symptoms, exclusions, duration.

Criteria values ship in a data file authored from the diagnostic manual; this
module is only the engine that loads and applies them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import IntegrityError, ParseError
from .kgstore import KnowledgeGraph, Relation, neighbors

# Reserved label meaning "no disorder indicated"; kept as a plain string so it
# can travel through record files and metric label sets unchanged.
NO_DIAGNOSIS = "no_diagnosis"


@dataclass(frozen=True)
class DisorderCriteria:
    disorder: str
    min_symptom_count: int
    core_symptoms: frozenset[str]
    min_core_count: int
    exclusions: frozenset[str]
    required_duration_days: int | None
    # Snapshot of the disorder's has_symptom set from the companion graph, so
    # rule evaluation needs no graph handle and stays a pure function.
    symptoms: frozenset[str]


@dataclass(frozen=True)
class RuleOutcome:
    disorder: str
    count_met: bool
    core_met: bool
    exclusions_clear: bool
    duration_met: bool

    @property
    def indicated(self) -> bool:
        return self.count_met and self.core_met and self.exclusions_clear and self.duration_met


def load_criteria(path: str | Path, kg: KnowledgeGraph) -> dict[str, DisorderCriteria]:
    """Load a line-delimited criteria file and validate it against the graph."""
    criteria_map: dict[str, DisorderCriteria] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        try:
            disorder = str(record["disorder"])
            min_count = int(record["min_symptom_count"])
            min_core = int(record.get("min_core_count", 1))
            core = frozenset(str(s) for s in record.get("core_symptoms", []))
            exclusions = frozenset(str(e) for e in record.get("exclusions", []))
            duration = record.get("required_duration_days")
            duration = int(duration) if duration is not None else None
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad criteria record: {exc}", line=lineno) from exc

        if min_count < 0 or min_core < 0 or (duration is not None and duration < 0):
            raise ParseError("counts and duration must be non-negative", line=lineno)
        if disorder not in kg.entities:
            raise IntegrityError(f"criteria for unknown disorder '{disorder}'")
        if disorder in criteria_map:
            raise IntegrityError(f"duplicate criteria for disorder '{disorder}'")

        symptom_set = frozenset(
            t.object for t in neighbors(kg, disorder, Relation.HAS_SYMPTOM)
        )
        missing_core = core - symptom_set
        if missing_core:
            raise IntegrityError(
                f"core symptoms {sorted(missing_core)} are not has_symptom "
                f"neighbors of '{disorder}'"
            )
        missing_excl = {e for e in exclusions if e not in kg.entities}
        if missing_excl:
            raise IntegrityError(
                f"exclusions {sorted(missing_excl)} not present in graph"
            )
        if min_core > len(core):
            raise IntegrityError(
                f"'{disorder}': min_core_count {min_core} exceeds declared core set"
            )
        if min_count < min_core:
            raise IntegrityError(
                f"'{disorder}': min_symptom_count {min_count} below min_core_count"
            )

        criteria_map[disorder] = DisorderCriteria(
            disorder=disorder,
            min_symptom_count=min_count,
            core_symptoms=core,
            min_core_count=min_core,
            exclusions=exclusions,
            required_duration_days=duration,
            symptoms=symptom_set,
        )
    return criteria_map


def evaluate_rules(
    criteria: DisorderCriteria,
    present_symptoms: frozenset[str] | set[str],
    active_exclusions: frozenset[str] | set[str],
    duration_days: int | None = None,
) -> RuleOutcome:
    """Apply one disorder's criteria to symptom evidence. Total and pure.

    Duration counts as met when the evidence carries no duration at all; a
    criteria entry without a required duration is always met.
    """
    matched = frozenset(present_symptoms) & criteria.symptoms
    count_met = len(matched) >= criteria.min_symptom_count
    core_met = len(matched & criteria.core_symptoms) >= criteria.min_core_count
    exclusions_clear = not (frozenset(active_exclusions) & criteria.exclusions)
    if criteria.required_duration_days is None or duration_days is None:
        duration_met = True
    else:
        duration_met = duration_days >= criteria.required_duration_days
    return RuleOutcome(
        disorder=criteria.disorder,
        count_met=count_met,
        core_met=core_met,
        exclusions_clear=exclusions_clear,
        duration_met=duration_met,
    )


def matched_symptom_count(criteria: DisorderCriteria, symptoms: frozenset[str] | set[str]) -> int:
    return len(frozenset(symptoms) & criteria.symptoms)


def silver_label(
    criteria_map: dict[str, DisorderCriteria],
    kg: KnowledgeGraph,
    gold_symptoms: frozenset[str] | set[str],
    gold_exclusions: frozenset[str] | set[str] = frozenset(),
    duration_days: int | None = None,
) -> str:
    """Reference label from gold annotations: the indicated disorder with the
    largest matched-symptom count, ties broken by disorder id; NO_DIAGNOSIS when
    nothing is indicated."""
    best: tuple[int, str] | None = None
    for disorder_id in sorted(criteria_map):
        criteria = criteria_map[disorder_id]
        outcome = evaluate_rules(criteria, gold_symptoms, gold_exclusions, duration_days)
        if not outcome.indicated:
            continue
        matched = matched_symptom_count(criteria, gold_symptoms)
        if best is None or matched > best[0]:
            best = (matched, disorder_id)
    return best[1] if best is not None else NO_DIAGNOSIS


def render_criteria_text(
    kg: KnowledgeGraph,
    criteria_map: dict[str, DisorderCriteria],
    disorder_ids: list[str] | None = None,
) -> str:
    """Human-readable criteria summary injected into prompts.

    Baseline prompting modes receive the same summary as the staged pipeline.
    """
    ids = sorted(criteria_map) if disorder_ids is None else [
        d for d in disorder_ids if d in criteria_map
    ]
    blocks = []
    for disorder_id in ids:
        crit = criteria_map[disorder_id]
        name = kg.name_of(disorder_id)
        lines = [f"{name}:"]
        lines.append(
            f"  requires at least {crit.min_symptom_count} of: "
            + ", ".join(sorted(kg.name_of(s) for s in crit.symptoms))
        )
        if crit.core_symptoms:
            lines.append(
                f"  at least {crit.min_core_count} core symptom(s) of: "
                + ", ".join(sorted(kg.name_of(s) for s in crit.core_symptoms))
            )
        if crit.required_duration_days is not None:
            lines.append(f"  duration at least {crit.required_duration_days} days")
        if crit.exclusions:
            lines.append(
                "  excluded by: "
                + ", ".join(sorted(kg.name_of(e) for e in crit.exclusions))
            )
        blocks.append("\n".join(lines))
    return "\n".join(blocks)
