"""Logic-consistency grading and the combined diagnosis confidence score.

The reasoning trace's step assertions are compared against the deterministic
rule engine (the default grader; a provider-graded mode exists behind a flag
on score_reasoning), then blended with the knowledge attribution score.
"""

from __future__ import annotations

from dataclasses import dataclass

from .claims import (
    AttributionLabel,
    ClaimScore,
    ScoringConfig,
    classify_attribution,
    decompose_claims,
    kas_aggregate,
    score_claim,
)
from .criteria import NO_DIAGNOSIS, DisorderCriteria, evaluate_rules, matched_symptom_count
from .egdr import (
    DiagnosticHypothesis,
    _CORE_ASSERT_RE,
    _COUNT_ASSERT_RE,
    _STATUS_RE,
    _parse_bool_assert,
    _parse_duration,
)
from .errors import (
    DiagkitError,
    DomainError,
    MalformedTrace,
    StageError,
    UnknownDisorder,
)
from .kgstore import KnowledgeGraph
from .providers import ChatProvider, Embedder, LocalHashEmbedder
from .retrieval import claim_triplet_sim, extract_entities, walk_retrieve

LCS_LEVELS = (0, 1, 2, 3)


@dataclass(frozen=True)
class LogicTrace:
    conclusion: str
    claimed_symptoms: frozenset[str] = frozenset()
    claimed_exclusions: frozenset[str] = frozenset()
    claimed_duration_days: int | None = None
    count_met: bool | None = None
    core_met: bool | None = None
    exclusions_clear: bool | None = None
    # Disorder the step assertions talk about; equals the conclusion except in
    # no-diagnosis traces, where it is the candidate the trace examined.
    assertion_disorder: str | None = None


@dataclass(frozen=True)
class ConfidenceReport:
    dialogue_id: str
    diagnosis: str
    kas: float
    lcs: int
    dcs: float
    claim_scores: tuple[ClaimScore, ...]
    evidence_triplet_ids: tuple[str, ...]
    alpha: float
    lambda_: float

    def to_record(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "diagnosis": self.diagnosis,
            "kas": self.kas,
            "lcs": self.lcs,
            "dcs": self.dcs,
            "claims": [
                {
                    "text": c.text,
                    "label": c.label.value,
                    "sim": c.sim,
                    "epr": c.epr,
                    "tms": c.tms,
                    "weight": c.weight,
                }
                for c in self.claim_scores
            ],
            "evidence_triplet_ids": list(self.evidence_triplet_ids),
            "config": {"alpha": self.alpha, "lambda": self.lambda_},
        }

    @classmethod
    def from_record(cls, record: dict) -> "ConfidenceReport":
        return cls(
            dialogue_id=record["dialogue_id"],
            diagnosis=record["diagnosis"],
            kas=float(record["kas"]),
            lcs=int(record["lcs"]),
            dcs=float(record["dcs"]),
            claim_scores=tuple(
                ClaimScore(
                    claim_id=i,
                    text=c["text"],
                    label=AttributionLabel(c["label"]),
                    sim=float(c["sim"]),
                    epr=float(c["epr"]),
                    tms=float(c["tms"]),
                    weight=float(c["weight"]),
                )
                for i, c in enumerate(record.get("claims", []))
            ),
            evidence_triplet_ids=tuple(record.get("evidence_triplet_ids", [])),
            alpha=float(record.get("config", {}).get("alpha", 0.5)),
            lambda_=float(record.get("config", {}).get("lambda", 0.75)),
        )


def parse_logic_trace(hypothesis: DiagnosticHypothesis) -> LogicTrace:
    """Map a hypothesis's structured sections into a logic trace.

    Structured fields win when populated; otherwise the reasoning text is
    scanned for assertion markers, so baseline-mode hypotheses still yield a
    (sparser) trace. Unrecognized prose is ignored.
    """
    if not hypothesis.final_diagnosis:
        raise MalformedTrace(
            f"hypothesis '{hypothesis.dialogue_id}' has no final-diagnosis section"
        )
    conclusion = hypothesis.final_diagnosis

    assertion_disorder = None
    count_met = core_met = None
    if conclusion in hypothesis.criteria_analysis:
        assertion_disorder = conclusion
    elif hypothesis.criteria_analysis:
        for candidate_id in hypothesis.candidates.ids:
            if candidate_id in hypothesis.criteria_analysis:
                assertion_disorder = candidate_id
                break
        else:
            assertion_disorder = sorted(hypothesis.criteria_analysis)[0]
    if assertion_disorder is not None:
        assertion = hypothesis.criteria_analysis[assertion_disorder]
        count_met = assertion.count_met
        core_met = assertion.core_met

    text = hypothesis.reasoning_text
    if count_met is None:
        count_met = _parse_bool_assert(_COUNT_ASSERT_RE.search(text))
    if core_met is None:
        core_met = _parse_bool_assert(_CORE_ASSERT_RE.search(text))

    exclusions_clear = hypothesis.exclusion_analysis.clear
    if exclusions_clear is None:
        status = _STATUS_RE.search(text)
        if status is not None:
            exclusions_clear = status.group(1).lower() == "clear"

    duration = hypothesis.duration_days
    if duration is None:
        duration = _parse_duration(text)

    if assertion_disorder is None and conclusion != NO_DIAGNOSIS:
        assertion_disorder = conclusion

    return LogicTrace(
        conclusion=conclusion,
        claimed_symptoms=frozenset(hypothesis.extracted_symptoms),
        claimed_exclusions=hypothesis.exclusion_analysis.exclusions,
        claimed_duration_days=duration,
        count_met=count_met,
        core_met=core_met,
        exclusions_clear=exclusions_clear,
        assertion_disorder=assertion_disorder,
    )


def logic_consistency_score(
    trace: LogicTrace,
    criteria_map: dict[str, DisorderCriteria],
    kg: KnowledgeGraph,
) -> int:
    """Grade the trace 0..3 against the rule engine.

    0: a step assertion claims a failed check passed and that manufactured the
    concluded disorder. 1: wrong or unshowable logic with a conclusion that
    disagrees with the rules. 2: conclusion agrees but some assertion is wrong
    or missing. 3: all three assertions present, correct, and the conclusion
    agrees.
    """
    claimed = trace.claimed_symptoms
    exclusions = trace.claimed_exclusions
    duration = trace.claimed_duration_days

    if trace.conclusion != NO_DIAGNOSIS:
        if trace.conclusion not in criteria_map:
            raise UnknownDisorder(trace.conclusion)
        reference = evaluate_rules(criteria_map[trace.conclusion], claimed, exclusions, duration)
        conclusion_match = reference.indicated
    else:
        outcomes = {
            disorder: evaluate_rules(crit, claimed, exclusions, duration)
            for disorder, crit in criteria_map.items()
        }
        conclusion_match = not any(o.indicated for o in outcomes.values())
        reference_id = trace.assertion_disorder
        if reference_id not in outcomes:
            reference_id = _best_matching_disorder(criteria_map, claimed)
        reference = outcomes.get(reference_id)

    asserted = (
        (trace.count_met, None if reference is None else reference.count_met),
        (trace.core_met, None if reference is None else reference.core_met),
        (trace.exclusions_clear, None if reference is None else reference.exclusions_clear),
    )
    present = [(a, o) for a, o in asserted if a is not None and o is not None]
    wrong = [(a, o) for a, o in present if a != o]
    overstated = any(a is True and o is False for a, o in present)
    complete = len(present) == 3

    if trace.conclusion != NO_DIAGNOSIS and not conclusion_match and overstated:
        return 0
    if wrong:
        return 2 if conclusion_match else 1
    if not conclusion_match:
        return 1
    return 3 if complete else 2


def _best_matching_disorder(
    criteria_map: dict[str, DisorderCriteria], symptoms: frozenset[str]
) -> str | None:
    best: tuple[int, str] | None = None
    for disorder_id in sorted(criteria_map):
        matched = matched_symptom_count(criteria_map[disorder_id], symptoms)
        if best is None or matched > best[0]:
            best = (matched, disorder_id)
    return best[1] if best else None


def diagnosis_confidence_score(kas: float, lcs: int, lambda_: float) -> float:
    """Blend attribution and logic consistency into one score in [0, 1]."""
    if not 0.0 <= kas <= 1.0:
        raise DomainError(f"kas must be in [0, 1], got {kas}")
    if lcs not in LCS_LEVELS:
        raise DomainError(f"lcs must be one of {LCS_LEVELS}, got {lcs}")
    if not 0.0 <= lambda_ <= 1.0:
        raise DomainError(f"lambda must be in [0, 1], got {lambda_}")
    return lambda_ * kas + (1.0 - lambda_) * (lcs / 3.0)


def score_reasoning(
    hypothesis: DiagnosticHypothesis,
    kg: KnowledgeGraph,
    criteria_map: dict[str, DisorderCriteria],
    config: ScoringConfig | None = None,
    chat_provider: ChatProvider | None = None,
    embedder: Embedder | None = None,
) -> ConfidenceReport:
    """Full verification pass over one hypothesis.

    Retrieves evidence seeded by the reasoning's own entities, scores every
    decomposed claim, grades the logic trace, and combines both scores.
    Component errors are re-raised wrapped with the failing stage's label.
    """
    config = config or ScoringConfig()
    embedder = embedder or LocalHashEmbedder()
    reasoning = hypothesis.reasoning_text

    def stage(label: str, fn):
        try:
            return fn()
        except DiagkitError as exc:
            raise StageError(label, exc) from exc

    seeds = stage("extract_entities", lambda: extract_entities(reasoning, kg))
    evidence = stage(
        "walk_retrieve",
        lambda: walk_retrieve(kg, seeds, config.retrieval_budget, embedder),
    )
    claims = stage(
        "decompose_claims",
        lambda: decompose_claims(reasoning, kg, chat_provider, config),
    )

    def classify_all():
        scores = []
        for claim in claims:
            label = classify_attribution(claim, evidence, chat_provider, config)
            sim = claim_triplet_sim(claim.text, evidence, embedder)
            scores.append(score_claim(claim, evidence, sim, label, config.alpha))
        return scores

    claim_scores = stage("classify_claims", classify_all)
    kas = stage(
        "kas_aggregate",
        lambda: kas_aggregate([c.weight for c in claim_scores], config.kas_mean_normalize),
    )
    trace = stage("parse_logic_trace", lambda: parse_logic_trace(hypothesis))
    lcs = stage(
        "logic_consistency_score",
        lambda: logic_consistency_score(trace, criteria_map, kg),
    )
    dcs = stage(
        "diagnosis_confidence_score",
        lambda: diagnosis_confidence_score(kas, lcs, config.lambda_),
    )

    return ConfidenceReport(
        dialogue_id=hypothesis.dialogue_id,
        diagnosis=hypothesis.final_diagnosis or NO_DIAGNOSIS,
        kas=kas,
        lcs=lcs,
        dcs=dcs,
        claim_scores=tuple(claim_scores),
        evidence_triplet_ids=tuple(evidence.triplet_keys()),
        alpha=config.alpha,
        lambda_=config.lambda_,
    )
