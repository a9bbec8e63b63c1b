"""Dialogue corpus loading, validation, and demographics bucketing.

Corpus files are line-delimited JSON records with multi-turn dialogues,
optional demographics, and optional gold annotations. Gold symptom mentions
stay surface forms here; they are resolved against the knowledge graph at use
time so corpus files remain graph-independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import DomainError, SchemaError


class Role(str, Enum):
    PATIENT = "Patient"
    CLINICIAN = "Clinician"


class AgeBucket(str, Enum):
    LE_17 = "<=17"
    A18_25 = "18-25"
    A26_35 = "26-35"
    A36_45 = "36-45"
    A46_60 = "46-60"
    OVER_60 = "60+"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Utterance:
    role: Role
    text: str
    turn_index: int


@dataclass(frozen=True)
class GoldAnnotation:
    depression_risk: int | None = None
    suicide_risk: int | None = None
    symptoms: tuple[str, ...] = ()
    exclusions: tuple[str, ...] = ()
    duration_days: int | None = None


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Utterance, ...]
    age_years: int | None = None
    gender: str | None = None
    gold: GoldAnnotation | None = None
    silver_label: str | None = None


def bucket_age(age_years: int | None) -> AgeBucket:
    """Total bucketing of optional ages into the demographic groups.

    Ranges are inclusive at both ends; 60 falls in 46-60 and 60+ means
    strictly older than 60. Absent ages map to the unknown bucket.
    """
    if age_years is None:
        return AgeBucket.UNKNOWN
    if age_years < 0:
        raise DomainError(f"age must be non-negative, got {age_years}")
    if age_years <= 17:
        return AgeBucket.LE_17
    if age_years <= 25:
        return AgeBucket.A18_25
    if age_years <= 35:
        return AgeBucket.A26_35
    if age_years <= 45:
        return AgeBucket.A36_45
    if age_years <= 60:
        return AgeBucket.A46_60
    return AgeBucket.OVER_60


def _parse_gold(raw: dict, line: int) -> GoldAnnotation:
    for risk_field in ("depression_risk", "suicide_risk"):
        value = raw.get(risk_field)
        if value is not None and (not isinstance(value, int) or not 0 <= value <= 3):
            raise SchemaError("risk must be an integer in 0..3", line=line, field=risk_field)
    duration = raw.get("duration_days")
    if duration is not None and (not isinstance(duration, int) or duration < 0):
        raise SchemaError("duration_days must be a non-negative integer", line=line, field="duration_days")
    for list_field in ("symptoms", "exclusions"):
        value = raw.get(list_field, [])
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise SchemaError("must be a list of strings", line=line, field=list_field)
    return GoldAnnotation(
        depression_risk=raw.get("depression_risk"),
        suicide_risk=raw.get("suicide_risk"),
        symptoms=tuple(raw.get("symptoms", [])),
        exclusions=tuple(raw.get("exclusions", [])),
        duration_days=duration,
    )


def _parse_dialogue(record: dict, line: int) -> Dialogue:
    dialogue_id = record.get("id")
    if not dialogue_id or not isinstance(dialogue_id, str):
        raise SchemaError("missing or non-string id", line=line, field="id")

    raw_turns = record.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise SchemaError("turns must be a non-empty list", line=line, field="turns")
    turns = []
    for index, raw_turn in enumerate(raw_turns):
        if not isinstance(raw_turn, dict):
            raise SchemaError("turn must be an object", line=line, field="turns")
        role_raw = raw_turn.get("role")
        if not isinstance(role_raw, str):
            raise SchemaError("turn missing role", line=line, field="role")
        try:
            role = Role(role_raw.capitalize())
        except ValueError:
            raise SchemaError(f"unknown role '{role_raw}'", line=line, field="role") from None
        text = raw_turn.get("text")
        if not isinstance(text, str) or not text.strip():
            raise SchemaError("turn text must be non-empty", line=line, field="text")
        turns.append(Utterance(role=role, text=text, turn_index=index))

    age = record.get("age")
    if age is not None and (not isinstance(age, int) or age < 0):
        raise SchemaError("age must be a non-negative integer", line=line, field="age")
    gender = record.get("gender")
    if gender is not None and not isinstance(gender, str):
        raise SchemaError("gender must be a string", line=line, field="gender")

    gold = None
    if record.get("gold") is not None:
        if not isinstance(record["gold"], dict):
            raise SchemaError("gold must be an object", line=line, field="gold")
        gold = _parse_gold(record["gold"], line)

    silver = record.get("silver_label")
    if silver is not None and not isinstance(silver, str):
        raise SchemaError("silver_label must be a string", line=line, field="silver_label")

    return Dialogue(
        id=dialogue_id,
        turns=tuple(turns),
        age_years=age,
        gender=gender,
        gold=gold,
        silver_label=silver,
    )


def load_dialogues(path: str | Path) -> list[Dialogue]:
    """Load a corpus file, validating every record. Order-preserving."""
    dialogues: list[Dialogue] = []
    seen_ids: set[str] = set()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if not isinstance(record, dict):
            raise SchemaError("record is not an object", line=lineno)
        dialogue = _parse_dialogue(record, lineno)
        if dialogue.id in seen_ids:
            raise SchemaError(f"duplicate dialogue id '{dialogue.id}'", line=lineno, field="id")
        seen_ids.add(dialogue.id)
        dialogues.append(dialogue)
    return dialogues


def dialogue_to_record(dialogue: Dialogue) -> dict:
    record: dict = {
        "id": dialogue.id,
        "turns": [
            {"role": t.role.value.lower(), "text": t.text} for t in dialogue.turns
        ],
    }
    if dialogue.age_years is not None:
        record["age"] = dialogue.age_years
    if dialogue.gender is not None:
        record["gender"] = dialogue.gender
    if dialogue.gold is not None:
        gold: dict = {}
        if dialogue.gold.depression_risk is not None:
            gold["depression_risk"] = dialogue.gold.depression_risk
        if dialogue.gold.suicide_risk is not None:
            gold["suicide_risk"] = dialogue.gold.suicide_risk
        if dialogue.gold.symptoms:
            gold["symptoms"] = list(dialogue.gold.symptoms)
        if dialogue.gold.exclusions:
            gold["exclusions"] = list(dialogue.gold.exclusions)
        if dialogue.gold.duration_days is not None:
            gold["duration_days"] = dialogue.gold.duration_days
        record["gold"] = gold
    if dialogue.silver_label is not None:
        record["silver_label"] = dialogue.silver_label
    return record


def save_dialogues(path: str | Path, dialogues: list[Dialogue]) -> None:
    lines = [
        json.dumps(dialogue_to_record(d), sort_keys=True, ensure_ascii=False)
        for d in dialogues
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_dialogue(dialogue: Dialogue) -> str:
    """Turn-by-turn text used inside prompts; preserves order and count."""
    return "\n".join(f"{t.role.value}: {t.text}" for t in dialogue.turns)


def resolve_gold(kg, dialogue: Dialogue) -> tuple[frozenset[str], frozenset[str], int | None]:
    """Resolve a dialogue's gold surface forms to graph ids.

    Returns (symptom ids, exclusion ids, duration). Surfaces that match no
    entity of the right kind are dropped.
    """
    from .kgstore import EntityKind, lookup_entity  # local import avoids a hard dependency for pure corpus use

    if dialogue.gold is None:
        return frozenset(), frozenset(), None
    symptoms: set[str] = set()
    for surface in dialogue.gold.symptoms:
        for entity_id in lookup_entity(kg, surface):
            if kg.entities[entity_id].kind is EntityKind.SYMPTOM:
                symptoms.add(entity_id)
    exclusions: set[str] = set()
    for surface in dialogue.gold.exclusions:
        for entity_id in lookup_entity(kg, surface):
            if kg.entities[entity_id].kind is EntityKind.EXCLUSION:
                exclusions.add(entity_id)
    return frozenset(symptoms), frozenset(exclusions), dialogue.gold.duration_days
