"""Entity extraction, candidate-disorder ranking, and graph-walk evidence retrieval.

The walk expands a frontier from seed entities, scoring each candidate edge by
an even blend of symbolic overlap (fraction of its endpoints already visited)
and semantic similarity (cosine between the verbalized edge and the seed
surface forms), and emits edges best-first until the budget is spent.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError, NotFound
from .kgstore import (
    EntityKind,
    KnowledgeGraph,
    Triplet,
    tokenize,
    verbalize_triplet,
)
from .providers import Embedder, cosine

DEFAULT_WALK_BUDGET = 32
DEFAULT_CANDIDATE_COUNT = 3


@dataclass(frozen=True)
class ScoredTriplet:
    triplet: Triplet
    relevance: float
    verbalized: str


@dataclass(frozen=True)
class RetrievedEvidence:
    seed_entities: frozenset[str]
    triplets: tuple[ScoredTriplet, ...]
    budget_used: int

    def entity_ids(self) -> frozenset[str]:
        ids: set[str] = set()
        for item in self.triplets:
            ids.update(item.triplet.endpoints())
        return frozenset(ids)

    def triplet_keys(self) -> list[str]:
        return [item.triplet.key for item in self.triplets]


@dataclass(frozen=True)
class CandidateDisorders:
    ranked: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [disorder_id for disorder_id, _ in self.ranked]

    def __len__(self) -> int:
        return len(self.ranked)

    def __bool__(self) -> bool:
        return bool(self.ranked)


def extract_entities(text: str, kg: KnowledgeGraph) -> frozenset[str]:
    """Longest-match scan of the normalized text against the alias lexicon.

    Deterministic, duplicate-collapsing; a provider-backed extractor may stand
    in for this matcher as long as it returns the same type.
    """
    tokens = tokenize(text)
    if not tokens:
        return frozenset()

    span_index: dict[tuple[str, ...], frozenset[str]] = {}
    max_span = 1
    for alias, ids in kg.alias_index.items():
        span = tuple(alias.split(" "))
        span_index[span] = span_index.get(span, frozenset()) | ids
        max_span = max(max_span, len(span))

    found: set[str] = set()
    i = 0
    n = len(tokens)
    while i < n:
        matched = 0
        for width in range(min(max_span, n - i), 0, -1):
            span = tuple(tokens[i : i + width])
            if span in span_index:
                found.update(span_index[span])
                matched = width
                break
        i += matched if matched else 1
    return frozenset(found)


def rank_candidate_disorders(
    kg: KnowledgeGraph,
    symptoms: frozenset[str] | set[str],
    k: int = DEFAULT_CANDIDATE_COUNT,
) -> CandidateDisorders:
    """Top-k disorders by symptom overlap; zero-overlap disorders are dropped."""
    symptom_set = frozenset(symptoms)
    scored: list[tuple[str, float]] = []
    for disorder in kg.entities_of_kind(EntityKind.DISORDER):
        disorder_symptoms = kg.disorder_symptoms(disorder.id)
        overlap = len(symptom_set & disorder_symptoms)
        if overlap == 0:
            continue
        scored.append((disorder.id, overlap / max(1, len(disorder_symptoms))))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return CandidateDisorders(ranked=tuple(scored[:k]))


def walk_retrieve(
    kg: KnowledgeGraph,
    seeds: frozenset[str] | set[str],
    budget: int,
    embedder: Embedder,
) -> RetrievedEvidence:
    """Best-first frontier expansion from the seed entities.

    Candidate edges are those touching any visited entity from either side;
    emitting an edge adds both its endpoints to the visited set. The returned
    list is re-sorted by relevance since later emissions can outscore earlier
    ones once more of the graph is visited.
    """
    seed_set = frozenset(seeds)
    if budget < 0:
        raise DomainError("budget must be >= 0")
    for seed in seed_set:
        if seed not in kg.entities:
            raise NotFound(f"seed entity '{seed}' not in graph")

    seed_surface = " ".join(kg.name_of(s) for s in sorted(seed_set))
    seed_vec = embedder.embed_text(seed_surface)

    visited: set[str] = set(seed_set)
    emitted: dict[str, ScoredTriplet] = {}
    semantic_cache: dict[str, float] = {}

    def semantic(triplet: Triplet, verbalized: str) -> float:
        if triplet.key not in semantic_cache:
            sim = cosine(embedder.embed_text(verbalized), seed_vec)
            semantic_cache[triplet.key] = min(1.0, max(0.0, sim))
        return semantic_cache[triplet.key]

    while len(emitted) < budget:
        best: tuple[tuple[float, str, str, str], Triplet, float, str] | None = None
        seen_keys: set[str] = set()
        for entity_id in visited:
            for triplet in kg.incidence.get(entity_id, ()):
                if triplet.key in emitted or triplet.key in seen_keys:
                    continue
                seen_keys.add(triplet.key)
                verbalized = verbalize_triplet(kg, triplet)
                symbolic = sum(1 for e in triplet.endpoints() if e in visited) / 2.0
                relevance = 0.5 * symbolic + 0.5 * semantic(triplet, verbalized)
                order = (-relevance, triplet.subject, triplet.relation.value, triplet.object)
                if best is None or order < best[0]:
                    best = (order, triplet, relevance, verbalized)
        if best is None:
            break
        _, triplet, relevance, verbalized = best
        emitted[triplet.key] = ScoredTriplet(
            triplet=triplet, relevance=relevance, verbalized=verbalized
        )
        visited.update(triplet.endpoints())

    items = sorted(
        emitted.values(), key=lambda item: (-item.relevance, item.triplet.key)
    )
    return RetrievedEvidence(
        seed_entities=seed_set, triplets=tuple(items), budget_used=len(items)
    )


def claim_triplet_sim(
    claim_text: str, evidence: RetrievedEvidence, embedder: Embedder
) -> float:
    """Best cosine similarity between the claim and any retrieved edge, in [0, 1].

    Empty evidence scores 0 by convention.
    """
    if not evidence.triplets:
        return 0.0
    claim_vec = embedder.embed_text(claim_text)
    best = 0.0
    for item in evidence.triplets:
        sim = cosine(claim_vec, embedder.embed_text(item.verbalized))
        best = max(best, min(1.0, max(0.0, sim)))
    return best
