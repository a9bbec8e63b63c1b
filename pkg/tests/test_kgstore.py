import pytest
from hypothesis import given, strategies as st

from diagkit.errors import IntegrityError, NotFound, ParseError
from diagkit.kgstore import (
    EntityKind,
    Relation,
    load_kg,
    lookup_entity,
    neighbors,
    normalize_text,
    serialize_kg,
)

from conftest import FIXTURES

MINIMAL = """\
{"type": "entity", "id": "root", "name": "root", "kind": "Root", "aliases": []}
{"type": "entity", "id": "dis_a", "name": "disorder a", "kind": "Disorder", "aliases": []}
{"type": "entity", "id": "sym_x", "name": "symptom x", "kind": "Symptom", "aliases": []}
{"type": "entity", "id": "sym_y", "name": "symptom y", "kind": "Symptom", "aliases": []}
{"type": "triplet", "subject": "root", "relation": "includes_disorder", "object": "dis_a"}
{"type": "triplet", "subject": "dis_a", "relation": "has_symptom", "object": "sym_x"}
{"type": "triplet", "subject": "dis_a", "relation": "has_symptom", "object": "sym_y"}
"""


def write_kg(tmp_path, text):
    path = tmp_path / "kg.jsonl"
    path.write_text(text)
    return path


def test_smallest_valid_graph(tmp_path):
    kg = load_kg(write_kg(tmp_path, MINIMAL))
    assert len(kg.entities) == 4
    assert len(kg.triplets) == 3


def test_fixture_counts_match_file(kg, kg_raw_records):
    declared_entities = sum(1 for r in kg_raw_records if r["type"] == "entity")
    literal_objects = {
        r["object_literal"] for r in kg_raw_records if r.get("object_literal") is not None
    }
    declared_triplets = sum(1 for r in kg_raw_records if r["type"] == "triplet")
    assert len(kg.entities) == declared_entities + len(literal_objects)
    assert len(kg.triplets) == declared_triplets


def test_dangling_object_is_integrity_error(tmp_path):
    text = MINIMAL + '{"type": "triplet", "subject": "dis_a", "relation": "has_symptom", "object": "sym_ghost"}\n'
    with pytest.raises(IntegrityError, match="sym_ghost"):
        load_kg(write_kg(tmp_path, text))


def test_duplicate_entity_id(tmp_path):
    text = MINIMAL + '{"type": "entity", "id": "dis_a", "name": "again", "kind": "Disorder", "aliases": []}\n'
    with pytest.raises(IntegrityError, match="duplicate entity"):
        load_kg(write_kg(tmp_path, text))


def test_duplicate_triplet(tmp_path):
    text = MINIMAL + '{"type": "triplet", "subject": "dis_a", "relation": "has_symptom", "object": "sym_x"}\n'
    with pytest.raises(IntegrityError, match="duplicate triplet"):
        load_kg(write_kg(tmp_path, text))


def test_kind_inconsistent_relation(tmp_path):
    text = MINIMAL + '{"type": "triplet", "subject": "sym_x", "relation": "has_symptom", "object": "sym_y"}\n'
    with pytest.raises(IntegrityError, match="has_symptom subject"):
        load_kg(write_kg(tmp_path, text))


def test_unknown_relation_is_parse_error(tmp_path):
    text = MINIMAL + '{"type": "triplet", "subject": "dis_a", "relation": "treats", "object": "sym_x"}\n'
    with pytest.raises(ParseError) as excinfo:
        load_kg(write_kg(tmp_path, text))
    assert excinfo.value.line == 8


def test_malformed_json_names_line(tmp_path):
    with pytest.raises(ParseError) as excinfo:
        load_kg(write_kg(tmp_path, MINIMAL + "{not json\n"))
    assert excinfo.value.line == 8


def test_missing_root(tmp_path):
    lines = [l for l in MINIMAL.splitlines() if '"root"' not in l]
    with pytest.raises(IntegrityError, match="Root"):
        load_kg(write_kg(tmp_path, "\n".join(lines)))


def test_unlinked_disorder(tmp_path):
    lines = [l for l in MINIMAL.splitlines() if "includes_disorder" not in l]
    with pytest.raises(IntegrityError, match="not reachable"):
        load_kg(write_kg(tmp_path, "\n".join(lines)))


def test_lookup_canonical(kg):
    assert lookup_entity(kg, "depressed mood") == frozenset({"sym_depressed_mood"})


def test_lookup_is_normalization_stable(kg):
    assert lookup_entity(kg, "DEPRESSED,  MOOD.") == frozenset({"sym_depressed_mood"})


def test_lookup_unknown_surface(kg):
    assert lookup_entity(kg, "purple unicorn") == frozenset()


@given(st.text(max_size=60))
def test_lookup_idempotent_under_normalization(s):
    kg = load_kg(FIXTURES / "kg.jsonl")
    assert lookup_entity(kg, normalize_text(s)) == lookup_entity(kg, s)


def test_neighbors_match_fixture_records(kg, kg_raw_records):
    expected = sorted(
        r["object"]
        for r in kg_raw_records
        if r["type"] == "triplet"
        and r["subject"] == "dis_mdd"
        and r["relation"] == "has_symptom"
    )
    got = [t.object for t in neighbors(kg, "dis_mdd", Relation.HAS_SYMPTOM)]
    assert got == expected


def test_root_links_every_fixture_disorder(kg, kg_raw_records):
    disorders = {r["id"] for r in kg_raw_records if r.get("kind") == "Disorder"}
    got = {t.object for t in neighbors(kg, "root", Relation.INCLUDES_DISORDER)}
    assert got == disorders


def test_neighbors_unknown_entity(kg):
    with pytest.raises(NotFound):
        neighbors(kg, "dis_ghost")


def test_neighbors_complete_and_sound(kg):
    all_triplets = set(kg.triplets)
    for entity_id in kg.entities:
        for relation in Relation:
            got = neighbors(kg, entity_id, relation)
            assert all(t in all_triplets for t in got)
            expected = {
                t for t in kg.triplets if t.subject == entity_id and t.relation is relation
            }
            assert set(got) == expected


def test_round_trip(kg, tmp_path):
    path = tmp_path / "copy.jsonl"
    path.write_text(serialize_kg(kg))
    reloaded = load_kg(path)
    assert reloaded.entities == kg.entities
    assert set(reloaded.triplets) == set(kg.triplets)
    assert reloaded.alias_index == kg.alias_index
    assert reloaded.adjacency == kg.adjacency


def test_literal_object_becomes_modifier(kg):
    modifiers = kg.entities_of_kind(EntityKind.MODIFIER)
    assert len(modifiers) == 1
    assert modifiers[0].canonical_name == "with early onset"
    specifier_edges = neighbors(kg, "dis_pdd", Relation.HAS_SPECIFIER)
    assert [t.object for t in specifier_edges] == [modifiers[0].id]


def test_every_disorder_reachable(kg):
    linked = {t.object for t in neighbors(kg, kg.root_id, Relation.INCLUDES_DISORDER)}
    for disorder in kg.entities_of_kind(EntityKind.DISORDER):
        assert disorder.id in linked


def test_aliases_contain_canonical_name(kg):
    for entity in kg.entities.values():
        assert entity.canonical_name in entity.aliases
        assert entity.id in lookup_entity(kg, entity.canonical_name)
