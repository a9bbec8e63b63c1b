"""Immutable knowledge graph of disorders, symptoms, criteria, exclusions and specifiers.

The graph is loaded once from a line-delimited JSON file and never mutated
afterwards, so it is safe for unsynchronized concurrent reads.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import IntegrityError, NotFound, ParseError


class EntityKind(str, Enum):
    DISORDER = "Disorder"
    SYMPTOM = "Symptom"
    CRITERION = "Criterion"
    EXCLUSION = "Exclusion"
    SPECIFIER = "Specifier"
    MODIFIER = "Modifier"
    ROOT = "Root"


class Relation(str, Enum):
    INCLUDES_DISORDER = "includes_disorder"
    HAS_SYMPTOM = "has_symptom"
    HAS_CRITERION = "has_criterion"
    HAS_EXCLUSION = "has_exclusion"
    HAS_SPECIFIER = "has_specifier"


# Required (subject kind, allowed object kinds) per relation. The vocabulary is
# closed: unknown relation strings are rejected at parse time.
RELATION_ENDPOINTS: dict[Relation, tuple[EntityKind, frozenset[EntityKind]]] = {
    Relation.INCLUDES_DISORDER: (EntityKind.ROOT, frozenset({EntityKind.DISORDER})),
    Relation.HAS_SYMPTOM: (EntityKind.DISORDER, frozenset({EntityKind.SYMPTOM})),
    Relation.HAS_CRITERION: (EntityKind.DISORDER, frozenset({EntityKind.CRITERION})),
    Relation.HAS_EXCLUSION: (EntityKind.DISORDER, frozenset({EntityKind.EXCLUSION})),
    # Modifier is permitted as the object so literal-valued qualifiers can be
    # stored as auto-created entities.
    Relation.HAS_SPECIFIER: (
        EntityKind.DISORDER,
        frozenset({EntityKind.SPECIFIER, EntityKind.MODIFIER}),
    ),
}

_PUNCT_RE = re.compile(r"[^\w\s]|_", re.UNICODE)
_WS_RE = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Canonical surface form: NFC, lowercase, punctuation to spaces, collapsed whitespace."""
    text = unicodedata.normalize("NFC", text).lower()
    text = _PUNCT_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def tokenize(text: str) -> list[str]:
    norm = normalize_text(text)
    return norm.split(" ") if norm else []


@dataclass(frozen=True)
class Entity:
    id: str
    canonical_name: str
    kind: EntityKind
    aliases: frozenset[str]


@dataclass(frozen=True)
class Triplet:
    subject: str
    relation: Relation
    object: str
    source: str = ""

    @property
    def key(self) -> str:
        """Stable identifier used in score records and evidence summaries."""
        return f"{self.subject}|{self.relation.value}|{self.object}"

    def endpoints(self) -> tuple[str, str]:
        return (self.subject, self.object)


@dataclass(frozen=True)
class KnowledgeGraph:
    entities: dict[str, Entity]
    triplets: tuple[Triplet, ...]
    alias_index: dict[str, frozenset[str]]
    adjacency: dict[str, tuple[Triplet, ...]]
    # Triplets that touch an entity from either side; used by the graph walk,
    # where edges such as disorder->symptom must be reachable from the symptom.
    incidence: dict[str, tuple[Triplet, ...]] = field(default_factory=dict)

    @property
    def root_id(self) -> str:
        for entity in self.entities.values():
            if entity.kind is EntityKind.ROOT:
                return entity.id
        raise IntegrityError("graph has no Root entity")

    def entities_of_kind(self, kind: EntityKind) -> list[Entity]:
        return [e for e in self.entities.values() if e.kind is kind]

    def disorder_symptoms(self, disorder_id: str) -> frozenset[str]:
        """Symptom ids attached to a disorder via has_symptom."""
        return frozenset(
            t.object for t in neighbors(self, disorder_id, Relation.HAS_SYMPTOM)
        )

    def name_of(self, entity_id: str) -> str:
        return self.entities[entity_id].canonical_name


def _literal_modifier_id(literal: str) -> str:
    return "mod_" + normalize_text(literal).replace(" ", "_")


def _parse_records(
    lines: list[str],
) -> tuple[list[tuple[int, Entity]], list[tuple[int, Triplet]]]:
    entities: list[tuple[int, Entity]] = []
    triplets: list[tuple[int, Triplet]] = []
    literal_entities: dict[str, Entity] = {}

    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if not isinstance(record, dict):
            raise ParseError("record is not an object", line=lineno)

        rtype = record.get("type")
        if rtype == "entity":
            for field_name in ("id", "name", "kind"):
                if not record.get(field_name):
                    raise ParseError(f"entity missing '{field_name}'", line=lineno)
            try:
                kind = EntityKind(record["kind"])
            except ValueError:
                raise ParseError(f"unknown kind '{record['kind']}'", line=lineno) from None
            aliases = record.get("aliases", [])
            if not isinstance(aliases, list):
                raise ParseError("'aliases' must be a list", line=lineno)
            name = str(record["name"])
            entities.append(
                (
                    lineno,
                    Entity(
                        id=str(record["id"]),
                        canonical_name=name,
                        kind=kind,
                        # the canonical name always counts as one of its own aliases
                        aliases=frozenset(str(a) for a in aliases) | {name},
                    ),
                )
            )
        elif rtype == "triplet":
            if not record.get("subject"):
                raise ParseError("triplet missing 'subject'", line=lineno)
            try:
                relation = Relation(record.get("relation"))
            except ValueError:
                raise ParseError(
                    f"unknown relation '{record.get('relation')}'", line=lineno
                ) from None
            if record.get("object_literal") is not None:
                if relation is not Relation.HAS_SPECIFIER:
                    raise ParseError(
                        "literal objects are only valid for has_specifier", line=lineno
                    )
                literal = str(record["object_literal"])
                obj_id = _literal_modifier_id(literal)
                if obj_id not in literal_entities:
                    modifier = Entity(
                        id=obj_id,
                        canonical_name=literal,
                        kind=EntityKind.MODIFIER,
                        aliases=frozenset({literal}),
                    )
                    literal_entities[obj_id] = modifier
                    entities.append((lineno, modifier))
            elif record.get("object"):
                obj_id = str(record["object"])
            else:
                raise ParseError("triplet missing 'object'", line=lineno)
            triplets.append(
                (
                    lineno,
                    Triplet(
                        subject=str(record["subject"]),
                        relation=relation,
                        object=obj_id,
                        source=str(record.get("source", "")),
                    ),
                )
            )
        else:
            raise ParseError(f"unknown record type '{rtype}'", line=lineno)

    return entities, triplets


def load_kg(path: str | Path) -> KnowledgeGraph:
    """Load and validate a knowledge graph file.

    Entities and triplets may appear in any order; integrity is checked after
    the whole file has been read.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    raw_entities, raw_triplets = _parse_records(lines)

    entities: dict[str, Entity] = {}
    for _lineno, entity in raw_entities:
        if entity.id in entities:
            if entity.kind is EntityKind.MODIFIER and entities[entity.id] == entity:
                continue  # the same literal appearing twice is fine
            raise IntegrityError(f"duplicate entity id '{entity.id}'")
        entities[entity.id] = entity

    roots = [e for e in entities.values() if e.kind is EntityKind.ROOT]
    if len(roots) != 1:
        raise IntegrityError(f"graph must have exactly one Root entity, found {len(roots)}")

    seen_triplets: set[tuple[str, str, str]] = set()
    triplets: list[Triplet] = []
    for _lineno, triplet in raw_triplets:
        for endpoint in triplet.endpoints():
            if endpoint not in entities:
                raise IntegrityError(
                    f"triplet {triplet.key} references undeclared id '{endpoint}'"
                )
        subj_kind, obj_kinds = RELATION_ENDPOINTS[triplet.relation]
        if entities[triplet.subject].kind is not subj_kind:
            raise IntegrityError(
                f"{triplet.relation.value} subject '{triplet.subject}' must be "
                f"{subj_kind.value}, got {entities[triplet.subject].kind.value}"
            )
        if entities[triplet.object].kind not in obj_kinds:
            raise IntegrityError(
                f"{triplet.relation.value} object '{triplet.object}' must be one of "
                f"{sorted(k.value for k in obj_kinds)}, got {entities[triplet.object].kind.value}"
            )
        dedupe_key = (triplet.subject, triplet.relation.value, triplet.object)
        if dedupe_key in seen_triplets:
            raise IntegrityError(f"duplicate triplet {triplet.key}")
        seen_triplets.add(dedupe_key)
        triplets.append(triplet)

    root_id = roots[0].id
    linked = {
        t.object
        for t in triplets
        if t.relation is Relation.INCLUDES_DISORDER and t.subject == root_id
    }
    for entity in entities.values():
        if entity.kind is EntityKind.DISORDER and entity.id not in linked:
            raise IntegrityError(f"disorder '{entity.id}' is not reachable from the root")

    alias_index: dict[str, set[str]] = {}
    for entity in entities.values():
        surfaces = set(entity.aliases) | {entity.canonical_name}
        for surface in surfaces:
            norm = normalize_text(surface)
            if norm:
                alias_index.setdefault(norm, set()).add(entity.id)

    adjacency: dict[str, list[Triplet]] = {eid: [] for eid in entities}
    incidence: dict[str, list[Triplet]] = {eid: [] for eid in entities}
    for triplet in triplets:
        adjacency[triplet.subject].append(triplet)
        incidence[triplet.subject].append(triplet)
        if triplet.object != triplet.subject:
            incidence[triplet.object].append(triplet)

    def _sorted(ts: list[Triplet]) -> tuple[Triplet, ...]:
        return tuple(sorted(ts, key=lambda t: (t.relation.value, t.object, t.subject)))

    return KnowledgeGraph(
        entities=entities,
        triplets=tuple(triplets),
        alias_index={k: frozenset(v) for k, v in alias_index.items()},
        adjacency={eid: _sorted(ts) for eid, ts in adjacency.items()},
        incidence={eid: _sorted(ts) for eid, ts in incidence.items()},
    )


def serialize_kg(kg: KnowledgeGraph) -> str:
    """Render a graph back to the line-delimited file format (load order preserved)."""
    lines = []
    for entity in kg.entities.values():
        if entity.kind is EntityKind.MODIFIER and entity.id.startswith("mod_"):
            continue  # re-created from the literal triplet on load
        lines.append(
            json.dumps(
                {
                    "type": "entity",
                    "id": entity.id,
                    "name": entity.canonical_name,
                    "kind": entity.kind.value,
                    "aliases": sorted(entity.aliases),
                },
                sort_keys=True,
            )
        )
    for triplet in kg.triplets:
        record: dict[str, str] = {
            "type": "triplet",
            "subject": triplet.subject,
            "relation": triplet.relation.value,
            "source": triplet.source,
        }
        obj = kg.entities[triplet.object]
        if obj.kind is EntityKind.MODIFIER and obj.id.startswith("mod_"):
            record["object_literal"] = obj.canonical_name
        else:
            record["object"] = triplet.object
        lines.append(json.dumps(record, sort_keys=True))
    return "\n".join(lines) + "\n"


def lookup_entity(kg: KnowledgeGraph, surface: str) -> frozenset[str]:
    """Entity ids whose normalized alias equals the normalized surface form."""
    return kg.alias_index.get(normalize_text(surface), frozenset())


def neighbors(
    kg: KnowledgeGraph, entity: str, relation_filter: Relation | None = None
) -> list[Triplet]:
    """Outgoing triplets of an entity, ordered by (relation, object id)."""
    if entity not in kg.entities:
        raise NotFound(f"entity '{entity}' not in graph")
    triplets = kg.adjacency.get(entity, ())
    if relation_filter is None:
        return list(triplets)
    return [t for t in triplets if t.relation is relation_filter]


def verbalize_triplet(kg: KnowledgeGraph, triplet: Triplet) -> str:
    """Single canonical sentence form used for embedding and prompts."""
    relation_text = triplet.relation.value.replace("_", " ")
    return (
        f"{kg.name_of(triplet.subject)} {relation_text} {kg.name_of(triplet.object)}"
    )
