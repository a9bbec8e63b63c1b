"""Five-stage evidence-guided diagnostic pipeline and single-turn baselines.

Each stage is one provider call: symptom extraction, candidate matching,
criteria check, exclusion check, final diagnosis. A stage's output is parsed
before the next stage's prompt is built, and every prompt carries the full
dialogue rendered turn by turn. A stage that cannot be parsed gets exactly one
repair retry (re-prompt including the parser's complaint).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .claims import ScoringConfig
from .criteria import NO_DIAGNOSIS, DisorderCriteria, render_criteria_text
from .datasets import Dialogue, render_dialogue
from .errors import DiagkitError, MissingSection, StageParseFailure
from .kgstore import (
    EntityKind,
    KnowledgeGraph,
    Relation,
    lookup_entity,
    neighbors,
    verbalize_triplet,
)
from .providers import ChatProvider, ChatRequest
from .retrieval import CandidateDisorders, rank_candidate_disorders
from .templates import load_template

SECTION_SYMPTOMS = "SYMPTOMS"
SECTION_CANDIDATES = "CANDIDATES"
SECTION_CRITERIA = "CRITERIA CHECK"
SECTION_EXCLUSIONS = "EXCLUSION CHECK"
SECTION_DIAGNOSIS = "FINAL DIAGNOSIS"
SECTION_REASONING = "REASONING"

ALL_SECTIONS = (
    SECTION_SYMPTOMS,
    SECTION_CANDIDATES,
    SECTION_CRITERIA,
    SECTION_EXCLUSIONS,
    SECTION_DIAGNOSIS,
    SECTION_REASONING,
)

_BULLET_RE = re.compile(r"^\s*[-*•]\s*")
_TURN_RE = re.compile(r"\(\s*turns?\s*[:#]?\s*([\d,\s]+)\)\s*$", re.I)
_DURATION_RE = re.compile(r"duration\s*[:=]?\s*(\d+)\s*days?", re.I)
_COUNT_ASSERT_RE = re.compile(r"symptom\s+count\s*[:=]?\s*(not\s+met|met)", re.I)
_CORE_ASSERT_RE = re.compile(r"core\s+symptoms?\s*[:=]?\s*(not\s+met|met|present|absent)", re.I)
_STATUS_RE = re.compile(r"status\s*[:=]?\s*(clear|blocked)", re.I)
_ACTIVE_RE = re.compile(r"active\s*[:=]?\s*(.+)$", re.I | re.M)
_NONE_RE = re.compile(r"^\s*none\b", re.I)


class PromptingMode(str, Enum):
    EGDR = "egdr"
    DIRECT = "direct"
    COT = "cot"


@dataclass(frozen=True)
class PromptBundle:
    stage: int
    system_text: str
    user_text: str
    expected_sections: tuple[str, ...]

    def request(self, config: ScoringConfig) -> ChatRequest:
        return ChatRequest(
            system_text=self.system_text,
            messages=(("user", self.user_text),),
            model=config.model,
            seed=config.seed,
        )

    def repair_request(self, config: ScoringConfig, complaint: str) -> ChatRequest:
        return ChatRequest(
            system_text=self.system_text,
            messages=(
                ("user", self.user_text),
                (
                    "user",
                    f"Your previous response could not be used: {complaint} "
                    "Respond again following the required format exactly.",
                ),
            ),
            model=config.model,
            seed=config.seed,
        )


@dataclass(frozen=True)
class CriteriaAssertion:
    text: str
    count_met: bool | None = None
    core_met: bool | None = None


@dataclass(frozen=True)
class ExclusionAnalysis:
    text: str = ""
    exclusions: frozenset[str] = frozenset()
    clear: bool | None = None


@dataclass(frozen=True)
class DiagnosticHypothesis:
    dialogue_id: str
    prompting_mode: PromptingMode
    extracted_symptoms: dict[str, tuple[int, ...]]
    candidates: CandidateDisorders
    criteria_analysis: dict[str, CriteriaAssertion]
    exclusion_analysis: ExclusionAnalysis
    # Disorder id or NO_DIAGNOSIS; None only for records that never carried a
    # final-diagnosis section (scoring rejects those as malformed).
    final_diagnosis: str | None
    reasoning_text: str
    duration_days: int | None = None

    def to_record(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "prompting_mode": self.prompting_mode.value,
            "extracted_symptoms": {
                sid: list(turns) for sid, turns in sorted(self.extracted_symptoms.items())
            },
            "candidates": [[cid, score] for cid, score in self.candidates.ranked],
            "criteria_analysis": {
                cid: {
                    "text": a.text,
                    "count_met": a.count_met,
                    "core_met": a.core_met,
                }
                for cid, a in sorted(self.criteria_analysis.items())
            },
            "exclusion_analysis": {
                "text": self.exclusion_analysis.text,
                "exclusions": sorted(self.exclusion_analysis.exclusions),
                "clear": self.exclusion_analysis.clear,
            },
            "final_diagnosis": self.final_diagnosis,
            "duration_days": self.duration_days,
            "reasoning_text": self.reasoning_text,
        }

    @classmethod
    def from_record(cls, record: dict) -> "DiagnosticHypothesis":
        exclusion = record.get("exclusion_analysis") or {}
        return cls(
            dialogue_id=record["dialogue_id"],
            prompting_mode=PromptingMode(record.get("prompting_mode", "egdr")),
            extracted_symptoms={
                sid: tuple(turns)
                for sid, turns in (record.get("extracted_symptoms") or {}).items()
            },
            candidates=CandidateDisorders(
                ranked=tuple(
                    (cid, float(score)) for cid, score in record.get("candidates", [])
                )
            ),
            criteria_analysis={
                cid: CriteriaAssertion(
                    text=a.get("text", ""),
                    count_met=a.get("count_met"),
                    core_met=a.get("core_met"),
                )
                for cid, a in (record.get("criteria_analysis") or {}).items()
            },
            exclusion_analysis=ExclusionAnalysis(
                text=exclusion.get("text", ""),
                exclusions=frozenset(exclusion.get("exclusions", [])),
                clear=exclusion.get("clear"),
            ),
            final_diagnosis=record.get("final_diagnosis"),
            reasoning_text=record.get("reasoning_text", ""),
            duration_days=record.get("duration_days"),
        )


def parse_structured_output(
    stage_text: str, expected_sections: tuple[str, ...] | list[str]
) -> dict[str, str]:
    """Map labeled sections of a stage response onto their bodies.

    Headers are matched case-insensitively at line starts; prose outside any
    known section is ignored. Raises MissingSection listing every expected
    label that is absent.
    """
    header_re = re.compile(
        r"^[ \t]*[#*>]*[ \t]*(" + "|".join(re.escape(s) for s in ALL_SECTIONS) + r")[ \t]*:(.*)$",
        re.I | re.M,
    )
    sections: dict[str, str] = {}
    matches = list(header_re.finditer(stage_text))
    for index, match in enumerate(matches):
        label = match.group(1).upper()
        start = match.end(2)
        end = matches[index + 1].start() if index + 1 < len(matches) else len(stage_text)
        body = (match.group(2) + stage_text[start:end]).strip()
        sections.setdefault(label, body)
    missing = [label for label in expected_sections if label not in sections]
    if missing:
        raise MissingSection(missing)
    return sections


def _parse_bullet_lines(body: str) -> list[str]:
    lines = []
    for raw in body.splitlines():
        stripped = _BULLET_RE.sub("", raw).strip()
        if stripped:
            lines.append(stripped)
    return lines


def _resolve_symptom_lines(
    body: str, kg: KnowledgeGraph
) -> dict[str, tuple[int, ...]]:
    """Resolve '- <surface> (turn n)' lines to symptom ids with turn support."""
    resolved: dict[str, set[int]] = {}
    for line in _parse_bullet_lines(body):
        if _NONE_RE.match(line):
            continue
        turns: set[int] = set()
        turn_match = _TURN_RE.search(line)
        if turn_match:
            turns = {int(v) for v in re.findall(r"\d+", turn_match.group(1))}
            line = line[: turn_match.start()].strip()
        line = line.rstrip(".;,")
        for entity_id in lookup_entity(kg, line):
            if kg.entities[entity_id].kind is EntityKind.SYMPTOM:
                resolved.setdefault(entity_id, set()).update(turns)
    return {sid: tuple(sorted(ts)) for sid, ts in sorted(resolved.items())}


def _parse_duration(text: str) -> int | None:
    match = _DURATION_RE.search(text)
    return int(match.group(1)) if match else None


def _parse_bool_assert(match: re.Match | None) -> bool | None:
    if match is None:
        return None
    value = match.group(1).lower()
    return value in ("met", "present")


def _parse_criteria_section(
    body: str, kg: KnowledgeGraph, candidate_ids: list[str]
) -> dict[str, CriteriaAssertion]:
    analysis: dict[str, CriteriaAssertion] = {}
    for line in _parse_bullet_lines(body):
        name, _, rest = line.partition(":")
        ids = [
            eid
            for eid in lookup_entity(kg, name.strip())
            if eid in candidate_ids
        ]
        if len(ids) != 1:
            continue
        analysis[ids[0]] = CriteriaAssertion(
            text=line,
            count_met=_parse_bool_assert(_COUNT_ASSERT_RE.search(rest)),
            core_met=_parse_bool_assert(_CORE_ASSERT_RE.search(rest)),
        )
    return analysis


def _parse_exclusion_section(body: str, kg: KnowledgeGraph) -> ExclusionAnalysis:
    status = _STATUS_RE.search(body)
    clear = None if status is None else status.group(1).lower() == "clear"
    active: set[str] = set()
    active_match = _ACTIVE_RE.search(body)
    if active_match and not _NONE_RE.match(active_match.group(1).strip()):
        for name in active_match.group(1).split(","):
            for entity_id in lookup_entity(kg, name.strip().rstrip(".;")):
                if kg.entities[entity_id].kind is EntityKind.EXCLUSION:
                    active.add(entity_id)
    if clear is None and (active or (active_match and _NONE_RE.match(active_match.group(1).strip()))):
        clear = not active
    return ExclusionAnalysis(text=body, exclusions=frozenset(active), clear=clear)


def _resolve_diagnosis(
    body: str, kg: KnowledgeGraph, allowed: list[str] | None
) -> str:
    """First line of the final-diagnosis body -> disorder id or NO_DIAGNOSIS."""
    first_line = _BULLET_RE.sub("", body.splitlines()[0]).strip().rstrip(".;") if body else ""
    if not first_line or re.match(r"no\s+diagnosis|none", first_line, re.I):
        return NO_DIAGNOSIS
    ids = [
        eid
        for eid in lookup_entity(kg, first_line)
        if kg.entities[eid].kind is EntityKind.DISORDER
    ]
    if len(ids) != 1:
        raise DiagkitError(f"final diagnosis '{first_line}' is not a known disorder.")
    if allowed is not None and ids[0] not in allowed:
        raise DiagkitError(
            f"final diagnosis '{first_line}' is not among the candidate disorders."
        )
    return ids[0]


def _call_stage(
    provider: ChatProvider,
    bundle: PromptBundle,
    config: ScoringConfig,
    parse,
):
    """One provider call with a single repair retry when parsing fails."""
    response = provider.chat_complete(bundle.request(config))
    try:
        return response, parse(response)
    except DiagkitError as first_error:
        repair = bundle.repair_request(config, str(first_error))
        response = provider.chat_complete(repair)
        try:
            return response, parse(response)
        except DiagkitError as exc:
            raise StageParseFailure(bundle.stage, str(exc)) from exc


def _symptom_vocabulary(kg: KnowledgeGraph) -> str:
    names = sorted(e.canonical_name for e in kg.entities_of_kind(EntityKind.SYMPTOM))
    return ", ".join(names)


def _kg_excerpt_for_symptoms(kg: KnowledgeGraph, symptom_ids: list[str]) -> str:
    lines = []
    for triplet in kg.triplets:
        if triplet.relation is Relation.HAS_SYMPTOM and triplet.object in symptom_ids:
            lines.append(verbalize_triplet(kg, triplet))
    return "\n".join(sorted(lines)) or "(none)"


def _kg_exclusion_excerpt(kg: KnowledgeGraph, disorder_ids: list[str]) -> str:
    lines = []
    for disorder_id in disorder_ids:
        for triplet in neighbors(kg, disorder_id, Relation.HAS_EXCLUSION):
            lines.append(verbalize_triplet(kg, triplet))
    return "\n".join(sorted(lines)) or "(none)"


def build_stage_prompt(
    stage: int,
    dialogue: Dialogue,
    kg: KnowledgeGraph,
    criteria_map: dict[str, DisorderCriteria],
    config: ScoringConfig,
    symptoms: dict[str, tuple[int, ...]] | None = None,
    candidates: CandidateDisorders | None = None,
    criteria_text_so_far: str = "",
    exclusion_text_so_far: str = "",
) -> PromptBundle:
    system_text = load_template(f"stage{stage}", config.template_version)
    dialogue_text = render_dialogue(dialogue)
    symptom_names = (
        "\n".join(f"- {kg.name_of(sid)}" for sid in sorted(symptoms)) if symptoms else "- none"
    )
    candidate_names = (
        "\n".join(f"- {kg.name_of(cid)}" for cid in candidates.ids)
        if candidates and candidates.ids
        else "- none"
    )

    if stage == 1:
        user_text = (
            f"Known symptom vocabulary: {_symptom_vocabulary(kg)}\n\n"
            f"Dialogue:\n{dialogue_text}"
        )
        expected = (SECTION_SYMPTOMS,)
    elif stage == 2:
        excerpt = _kg_excerpt_for_symptoms(kg, sorted(symptoms or {}))
        user_text = (
            f"Extracted symptoms:\n{symptom_names}\n\n"
            f"Knowledge graph links:\n{excerpt}\n\n"
            f"Candidate disorders:\n{candidate_names}\n\n"
            f"Dialogue:\n{dialogue_text}"
        )
        expected = (SECTION_CANDIDATES,)
    elif stage == 3:
        criteria_text = render_criteria_text(kg, criteria_map, candidates.ids if candidates else [])
        user_text = (
            f"Candidate disorders:\n{candidate_names}\n\n"
            f"Diagnostic criteria:\n{criteria_text}\n\n"
            f"Extracted symptoms:\n{symptom_names}\n\n"
            f"Dialogue:\n{dialogue_text}"
        )
        expected = (SECTION_CRITERIA,)
    elif stage == 4:
        excerpt = _kg_exclusion_excerpt(kg, candidates.ids if candidates else [])
        user_text = (
            f"Candidate disorders:\n{candidate_names}\n\n"
            f"Exclusion links:\n{excerpt}\n\n"
            f"Criteria check so far:\n{criteria_text_so_far}\n\n"
            f"Dialogue:\n{dialogue_text}"
        )
        expected = (SECTION_EXCLUSIONS,)
    elif stage == 5:
        user_text = (
            f"Extracted symptoms:\n{symptom_names}\n\n"
            f"Candidate disorders:\n{candidate_names}\n\n"
            f"Criteria check:\n{criteria_text_so_far}\n\n"
            f"Exclusion check:\n{exclusion_text_so_far}\n\n"
            f"Dialogue:\n{dialogue_text}"
        )
        expected = (SECTION_DIAGNOSIS,)
    else:
        raise ValueError(f"no stage {stage}")
    return PromptBundle(
        stage=stage, system_text=system_text, user_text=user_text, expected_sections=expected
    )


def run_egdr(
    dialogue: Dialogue,
    provider: ChatProvider,
    kg: KnowledgeGraph,
    criteria_map: dict[str, DisorderCriteria],
    config: ScoringConfig | None = None,
) -> DiagnosticHypothesis:
    """Run the staged pipeline on one dialogue.

    Candidate matching is the deterministic symptom-overlap ranker; the stage-2
    provider call supplies the analysis text for those candidates. When no
    candidate has any symptom overlap the remaining stages are skipped and the
    hypothesis concludes NO_DIAGNOSIS.
    """
    config = config or ScoringConfig()
    stage_texts: list[str] = []

    bundle1 = build_stage_prompt(1, dialogue, kg, criteria_map, config)
    text1, (symptoms, duration) = _call_stage(
        provider,
        bundle1,
        config,
        lambda response: _parse_stage1(response, kg),
    )
    stage_texts.append(text1.strip())

    candidates = rank_candidate_disorders(kg, set(symptoms))
    if not candidates:
        stage_texts.append(
            f"{SECTION_CANDIDATES}:\n- none\n\n{SECTION_DIAGNOSIS}: No Diagnosis\n"
            f"{SECTION_REASONING}: No candidate disorder overlaps the reported symptoms."
        )
        return DiagnosticHypothesis(
            dialogue_id=dialogue.id,
            prompting_mode=PromptingMode.EGDR,
            extracted_symptoms=symptoms,
            candidates=candidates,
            criteria_analysis={},
            exclusion_analysis=ExclusionAnalysis(),
            final_diagnosis=NO_DIAGNOSIS,
            reasoning_text="\n\n".join(stage_texts),
            duration_days=duration,
        )

    bundle2 = build_stage_prompt(
        2, dialogue, kg, criteria_map, config, symptoms=symptoms, candidates=candidates
    )
    text2, _ = _call_stage(
        provider,
        bundle2,
        config,
        lambda response: parse_structured_output(response, bundle2.expected_sections),
    )
    stage_texts.append(text2.strip())

    bundle3 = build_stage_prompt(
        3, dialogue, kg, criteria_map, config, symptoms=symptoms, candidates=candidates
    )
    text3, criteria_analysis = _call_stage(
        provider,
        bundle3,
        config,
        lambda response: _parse_stage3(response, kg, candidates.ids),
    )
    stage_texts.append(text3.strip())

    bundle4 = build_stage_prompt(
        4,
        dialogue,
        kg,
        criteria_map,
        config,
        symptoms=symptoms,
        candidates=candidates,
        criteria_text_so_far=text3.strip(),
    )
    text4, exclusion_analysis = _call_stage(
        provider,
        bundle4,
        config,
        lambda response: _parse_stage4(response, kg),
    )
    stage_texts.append(text4.strip())

    bundle5 = build_stage_prompt(
        5,
        dialogue,
        kg,
        criteria_map,
        config,
        symptoms=symptoms,
        candidates=candidates,
        criteria_text_so_far=text3.strip(),
        exclusion_text_so_far=text4.strip(),
    )
    text5, final_diagnosis = _call_stage(
        provider,
        bundle5,
        config,
        lambda response: _parse_stage5(response, kg, candidates.ids),
    )
    stage_texts.append(text5.strip())

    return DiagnosticHypothesis(
        dialogue_id=dialogue.id,
        prompting_mode=PromptingMode.EGDR,
        extracted_symptoms=symptoms,
        candidates=candidates,
        criteria_analysis=criteria_analysis,
        exclusion_analysis=exclusion_analysis,
        final_diagnosis=final_diagnosis,
        reasoning_text="\n\n".join(stage_texts),
        duration_days=duration,
    )


def _parse_stage1(response: str, kg: KnowledgeGraph):
    sections = parse_structured_output(response, (SECTION_SYMPTOMS,))
    symptoms = _resolve_symptom_lines(sections[SECTION_SYMPTOMS], kg)
    return symptoms, _parse_duration(response)


def _parse_stage3(response: str, kg: KnowledgeGraph, candidate_ids: list[str]):
    sections = parse_structured_output(response, (SECTION_CRITERIA,))
    return _parse_criteria_section(sections[SECTION_CRITERIA], kg, candidate_ids)


def _parse_stage4(response: str, kg: KnowledgeGraph):
    sections = parse_structured_output(response, (SECTION_EXCLUSIONS,))
    return _parse_exclusion_section(sections[SECTION_EXCLUSIONS], kg)


def _parse_stage5(response: str, kg: KnowledgeGraph, candidate_ids: list[str]):
    sections = parse_structured_output(response, (SECTION_DIAGNOSIS,))
    return _resolve_diagnosis(sections[SECTION_DIAGNOSIS], kg, allowed=candidate_ids)


def build_baseline_prompt(
    mode: PromptingMode,
    dialogue: Dialogue,
    kg: KnowledgeGraph,
    criteria_map: dict[str, DisorderCriteria],
    config: ScoringConfig,
) -> PromptBundle:
    template = "direct" if mode is PromptingMode.DIRECT else "cot"
    system_text = load_template(template, config.template_version)
    user_text = (
        f"Diagnostic criteria:\n{render_criteria_text(kg, criteria_map)}\n\n"
        f"Dialogue:\n{render_dialogue(dialogue)}"
    )
    expected = (SECTION_DIAGNOSIS,)
    if mode is PromptingMode.COT:
        expected = (SECTION_REASONING, SECTION_DIAGNOSIS)
    return PromptBundle(
        stage=1, system_text=system_text, user_text=user_text, expected_sections=expected
    )


def run_baseline(
    dialogue: Dialogue,
    provider: ChatProvider,
    kg: KnowledgeGraph,
    criteria_map: dict[str, DisorderCriteria],
    mode: PromptingMode,
    config: ScoringConfig | None = None,
) -> DiagnosticHypothesis:
    """Single-turn prompting baseline over the same criteria text."""
    if mode not in (PromptingMode.DIRECT, PromptingMode.COT):
        raise ValueError("baseline mode must be direct or cot")
    config = config or ScoringConfig()
    bundle = build_baseline_prompt(mode, dialogue, kg, criteria_map, config)

    def parse(response: str):
        sections = parse_structured_output(response, bundle.expected_sections)
        diagnosis = _resolve_diagnosis(sections[SECTION_DIAGNOSIS], kg, allowed=None)
        symptoms = (
            _resolve_symptom_lines(sections[SECTION_SYMPTOMS], kg)
            if SECTION_SYMPTOMS in sections
            else {}
        )
        return diagnosis, symptoms

    text, (diagnosis, symptoms) = _call_stage(provider, bundle, config, parse)
    return DiagnosticHypothesis(
        dialogue_id=dialogue.id,
        prompting_mode=mode,
        extracted_symptoms=symptoms,
        candidates=CandidateDisorders(ranked=()),
        criteria_analysis={},
        exclusion_analysis=ExclusionAnalysis(),
        final_diagnosis=diagnosis,
        reasoning_text=text.strip(),
        duration_days=_parse_duration(text),
    )
