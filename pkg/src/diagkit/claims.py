"""Claim decomposition, attribution classification, and trust-weight scoring.

Each atomic claim extracted from a reasoning passage is classified against the
retrieved evidence, blended into a triplet match score, weighted by the
symbolic class score, and aggregated into a knowledge attribution score.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

from .errors import DomainError, EmptyReasoning, UnparsableLabel
from .kgstore import KnowledgeGraph, tokenize
from .providers import ChatProvider, ChatRequest
from .retrieval import RetrievedEvidence, extract_entities
from .templates import DEFAULT_TEMPLATE_VERSION, load_template

DEFAULT_ALPHA = 0.5
DEFAULT_LAMBDA = 0.75

# Fixed word list for the deterministic fallback classifier. Provider mode is
# the production path; this list exists so tests never depend on a model.
NEGATION_TOKENS = frozenset({"no", "not", "never", "denies", "denied", "without"})

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")
_LIST_PREFIX_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


class AttributionLabel(Enum):
    ATTRIBUTABLE = "Attributable"
    EXTRAPOLATORY = "Extrapolatory"
    CONTRADICTORY = "Contradictory"
    NO_ATTRIBUTION = "NoAttribution"

    @property
    def cs(self) -> int:
        return _CLASS_SCORES[self]


_CLASS_SCORES = {
    AttributionLabel.ATTRIBUTABLE: 2,
    AttributionLabel.EXTRAPOLATORY: 1,
    AttributionLabel.CONTRADICTORY: -1,
    AttributionLabel.NO_ATTRIBUTION: 0,
}


@dataclass(frozen=True)
class Claim:
    id: int
    text: str
    entities: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ClaimScore:
    claim_id: int
    text: str
    label: AttributionLabel
    sim: float
    epr: float
    tms: float
    weight: float


@dataclass(frozen=True)
class ScoringConfig:
    """Knobs for the scoring pipeline plus run-level bookkeeping."""

    alpha: float = DEFAULT_ALPHA
    lambda_: float = DEFAULT_LAMBDA
    retrieval_budget: int = 32
    retry_limit: int = 3
    seed: int = 0
    # Off by default; divides the weight sum by the claim count before the
    # sigmoid, trading fidelity to the stated formula for less saturation.
    kas_mean_normalize: bool = False
    template_version: str = DEFAULT_TEMPLATE_VERSION
    max_concurrency: int = 4
    model: str = "default"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise DomainError(f"lambda must be in [0, 1], got {self.lambda_}")
        if self.retrieval_budget < 0:
            raise DomainError("retrieval_budget must be >= 0")


def decompose_claims(
    reasoning: str,
    kg: KnowledgeGraph,
    provider: ChatProvider | None = None,
    config: ScoringConfig | None = None,
) -> list[Claim]:
    """Split a reasoning passage into atomic claims.

    With a provider, claims are the non-empty lines of its response. Without
    one, a deterministic sentence split on terminal punctuation is used.
    """
    if not reasoning.strip():
        raise EmptyReasoning("reasoning text is empty")
    config = config or ScoringConfig()

    if provider is not None:
        system_text = load_template("decompose", config.template_version)
        response = provider.chat_complete(
            ChatRequest(
                system_text=system_text,
                messages=(("user", reasoning),),
                model=config.model,
                seed=config.seed,
            )
        )
        texts = [_LIST_PREFIX_RE.sub("", line).strip() for line in response.splitlines()]
    else:
        texts = [part.strip() for part in _SENTENCE_SPLIT_RE.split(reasoning)]

    claims = []
    for text in texts:
        if not text:
            continue
        claims.append(
            Claim(id=len(claims), text=text, entities=extract_entities(text, kg))
        )
    return claims


def _contains_negation(text: str) -> bool:
    return any(token in NEGATION_TOKENS for token in tokenize(text))


def classify_attribution(
    claim: Claim,
    evidence: RetrievedEvidence,
    provider: ChatProvider | None = None,
    config: ScoringConfig | None = None,
) -> AttributionLabel:
    """Four-way attribution of a claim against the retrieved evidence.

    Provider mode parses a constrained label response, with one repair retry.
    The symbolic fallback checks for a retrieved edge fully covered by the
    claim's entities (Attributable), a negated claim touching a retrieved edge
    (Contradictory), bare entity overlap (Extrapolatory), or none of those.
    """
    config = config or ScoringConfig()
    if provider is not None:
        return _classify_with_provider(claim, evidence, provider, config)

    negated = _contains_negation(claim.text)
    full_match = any(
        set(item.triplet.endpoints()) <= claim.entities for item in evidence.triplets
    )
    partial_match = any(
        claim.entities & set(item.triplet.endpoints()) for item in evidence.triplets
    )
    if negated and partial_match:
        return AttributionLabel.CONTRADICTORY
    if full_match:
        return AttributionLabel.ATTRIBUTABLE
    if claim.entities & evidence.entity_ids():
        return AttributionLabel.EXTRAPOLATORY
    return AttributionLabel.NO_ATTRIBUTION


_LABEL_PATTERNS = {
    AttributionLabel.ATTRIBUTABLE: re.compile(r"\battributable\b", re.I),
    AttributionLabel.EXTRAPOLATORY: re.compile(r"\bextrapolatory\b", re.I),
    AttributionLabel.CONTRADICTORY: re.compile(r"\bcontradictory\b", re.I),
    AttributionLabel.NO_ATTRIBUTION: re.compile(r"\bno[\s_]?attribution\b", re.I),
}


def _parse_label(response: str) -> AttributionLabel | None:
    matches = [label for label, pattern in _LABEL_PATTERNS.items() if pattern.search(response)]
    return matches[0] if len(matches) == 1 else None


def _classify_with_provider(
    claim: Claim,
    evidence: RetrievedEvidence,
    provider: ChatProvider,
    config: ScoringConfig,
) -> AttributionLabel:
    system_text = load_template("classify", config.template_version)
    evidence_text = "\n".join(item.verbalized for item in evidence.triplets) or "(none)"
    user_text = f"Claim: {claim.text}\nEvidence:\n{evidence_text}"
    request = ChatRequest(
        system_text=system_text,
        messages=(("user", user_text),),
        model=config.model,
        seed=config.seed,
    )
    label = _parse_label(provider.chat_complete(request))
    if label is not None:
        return label
    repair_request = ChatRequest(
        system_text=system_text,
        messages=(
            ("user", user_text),
            (
                "user",
                "Your previous answer did not name exactly one of: Attributable, "
                "Extrapolatory, Contradictory, No Attribution. Answer with one label only.",
            ),
        ),
        model=config.model,
        seed=config.seed,
    )
    label = _parse_label(provider.chat_complete(repair_request))
    if label is None:
        raise UnparsableLabel(f"no valid label for claim {claim.id}")
    return label


def entity_pr(
    claim_entities: frozenset[str] | set[str],
    evidence_entities: frozenset[str] | set[str],
) -> float:
    """Harmonic mean of entity precision and recall between claim and evidence.

    Empty claim or evidence sets default the corresponding side to 1, so a
    claim without medical entities is penalized through similarity instead of
    a division artifact.
    """
    claim_set = frozenset(claim_entities)
    evidence_set = frozenset(evidence_entities)
    overlap = len(claim_set & evidence_set)
    precision = 1.0 if not claim_set else overlap / len(claim_set)
    recall = 1.0 if not evidence_set else overlap / len(evidence_set)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def triplet_match_score(sim: float, epr: float, alpha: float) -> float:
    """Blend of semantic similarity and entity precision/recall."""
    for name, value in (("sim", sim), ("epr", epr), ("alpha", alpha)):
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"{name} must be in [0, 1], got {value}")
    return alpha * sim + (1.0 - alpha) * epr


def claim_weight(label: AttributionLabel, tms: float) -> float:
    """Symbolic class score scaled by the match score; lies in [-1, 2]."""
    return label.cs * tms


def kas_aggregate(weights: list[float], mean_normalize: bool = False) -> float:
    """Sigmoid of the summed claim weights; an empty list scores 0.5.

    The exact sum is used (fsum), which makes the result invariant under
    permutation of the claim list. Very long lists can saturate the sigmoid;
    that is accepted behavior of the stated formula.
    """
    if not weights:
        return 0.5
    total = math.fsum(weights)
    if mean_normalize:
        total /= len(weights)
    return 1.0 / (1.0 + math.exp(-total))


def score_claim(
    claim: Claim,
    evidence: RetrievedEvidence,
    sim: float,
    label: AttributionLabel,
    alpha: float,
) -> ClaimScore:
    """Assemble the per-claim score record from its components."""
    epr = entity_pr(claim.entities, evidence.entity_ids())
    tms = triplet_match_score(sim, epr, alpha)
    return ClaimScore(
        claim_id=claim.id,
        text=claim.text,
        label=label,
        sim=sim,
        epr=epr,
        tms=tms,
        weight=claim_weight(label, tms),
    )
