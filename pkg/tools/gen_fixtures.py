#!/usr/bin/env python3
"""Regenerate the synthetic corpus and stub script fixtures.

Deterministic given the seed; run from the repository root:

    python3 tools/gen_fixtures.py

Writes fixtures/corpus.jsonl, fixtures/stub_scripts_egdr.jsonl (faithful
responses for every dialogue) and fixtures/stub_scripts_mixed.jsonl (flawed
responses for a fixed subset, for calibration-separation experiments).
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from diagkit.claims import ScoringConfig
from diagkit.criteria import load_criteria, silver_label
from diagkit.datasets import (
    Dialogue,
    GoldAnnotation,
    Role,
    Utterance,
    resolve_gold,
    save_dialogues,
)
from diagkit.kgstore import load_kg, lookup_entity
from diagkit.providers import write_script_file
from diagkit.stubgen import generate_scripts

SEED = 20240601
CORPUS_SIZE = 40

# Surface phrases per symptom; every phrase must resolve through the graph's
# alias lexicon (validated below).
PHRASES = {
    "sym_depressed_mood": ["feeling down", "low mood", "feeling sad"],
    "sym_anhedonia": ["loss of interest", "nothing interests me"],
    "sym_appetite_change": ["poor appetite", "eating much less"],
    "sym_insomnia": ["can't sleep", "trouble sleeping", "barely sleeping"],
    "sym_psychomotor": ["restlessness", "feeling slowed down"],
    "sym_fatigue": ["tired all the time", "no energy", "exhausted"],
    "sym_worthlessness": ["feeling worthless", "excessive guilt"],
    "sym_concentration": ["can't concentrate", "trouble focusing"],
    "sym_suicidal_ideation": ["thoughts of death"],
    "sym_hopelessness": ["feeling hopeless", "no hope"],
    "sym_low_self_esteem": ["feel like a failure"],
    "sym_distress": ["overwhelming distress", "extremely stressed"],
    "sym_impaired_functioning": ["can't manage daily tasks", "struggling at work"],
    "sym_tearfulness": ["crying spells", "crying a lot"],
}

EXCLUSION_PHRASES = {
    "exc_manic_episode": "I went through a manic phase last year where I barely needed sleep.",
    "exc_substance_cause": "My doctor thinks it started when I changed medication.",
}

OPENERS = [
    "What brings you in today?",
    "How have you been feeling lately?",
    "Tell me what has been going on.",
]
FOLLOWUPS = [
    "I see. Anything else you have noticed?",
    "How has that been affecting you?",
    "Can you tell me more about that?",
]
DURATION_QUESTIONS = [
    "How long has this been going on?",
    "When did all of this start?",
]
CLOSERS = [
    "Thank you for sharing that with me.",
    "Alright, let's go through this together.",
]

# (scenario name, count, age cycle); ages chosen to cover every bucket
SCENARIOS = (
    ["mdd"] * 16 + ["pdd"] * 8 + ["adjustment"] * 6
    + ["none_few"] * 4 + ["none_exclusion"] * 3 + ["none_duration"] * 3
)
AGES = [16, 17, 19, 22, 24, 25, 28, 31, 33, 35, 38, 41, 45, 47, 52, 58, 60, 61, 67, None]
GENDERS = ["female", "male", "female", None, "female", "male"]

MDD_POOL = [
    "sym_appetite_change", "sym_insomnia", "sym_psychomotor", "sym_fatigue",
    "sym_worthlessness", "sym_concentration", "sym_suicidal_ideation",
]
PDD_EXTRAS = ["sym_low_self_esteem", "sym_hopelessness"]
ADJ_POOL = ["sym_distress", "sym_impaired_functioning", "sym_tearfulness"]


def pick_symptoms(rng: random.Random, scenario: str) -> tuple[list[str], int | None, list[str]]:
    """Return (symptom ids, duration days, exclusion ids) for one scenario."""
    if scenario == "mdd":
        core = rng.sample(["sym_depressed_mood", "sym_anhedonia"], k=rng.choice([1, 2]))
        others = rng.sample(MDD_POOL, k=rng.randint(5 - len(core), 6 - len(core)))
        return core + others, rng.choice([15, 21, 30, 45, 60]), []
    if scenario == "pdd":
        # keep the MDD-shared subset below five so only the persistent form fires
        shared = rng.sample(["sym_insomnia", "sym_fatigue", "sym_appetite_change"], k=rng.randint(1, 2))
        extras = rng.sample(PDD_EXTRAS, k=rng.randint(1, 2))
        return ["sym_depressed_mood"] + shared + extras, rng.choice([760, 900, 1100]), []
    if scenario == "adjustment":
        base = rng.sample(ADJ_POOL, k=rng.randint(2, 3))
        if rng.random() < 0.5 and "sym_distress" not in base:
            base.append("sym_distress")
        return base, rng.choice([20, 40, 70]), []
    if scenario == "none_few":
        return rng.sample(MDD_POOL, k=rng.randint(2, 3)), rng.choice([None, 30]), []
    if scenario == "none_exclusion":
        core = ["sym_depressed_mood"]
        others = rng.sample(MDD_POOL, k=5)
        exclusion = rng.choice(list(EXCLUSION_PHRASES))
        return core + others, 30, [exclusion]
    if scenario == "none_duration":
        core = rng.sample(["sym_depressed_mood", "sym_anhedonia"], k=1)
        others = rng.sample(MDD_POOL, k=5)
        return core + others, rng.choice([5, 7, 10]), []
    raise ValueError(scenario)


def build_turns(
    rng: random.Random,
    phrases: list[str],
    duration: int | None,
    exclusion_lines: list[str],
) -> list[Utterance]:
    turns: list[tuple[Role, str]] = [(Role.CLINICIAN, rng.choice(OPENERS))]
    chunks = [phrases[i : i + 3] for i in range(0, len(phrases), 3)]
    for index, chunk in enumerate(chunks):
        if len(chunk) == 1:
            sentence = f"I've been dealing with {chunk[0]}."
        else:
            sentence = "I've been dealing with " + ", ".join(chunk[:-1]) + f" and {chunk[-1]}."
        turns.append((Role.PATIENT, sentence))
        if index + 1 < len(chunks):
            turns.append((Role.CLINICIAN, rng.choice(FOLLOWUPS)))
    turns.append((Role.CLINICIAN, rng.choice(DURATION_QUESTIONS)))
    if duration is None:
        turns.append((Role.PATIENT, "Honestly I could not say exactly."))
    elif duration >= 700:
        turns.append((Role.PATIENT, f"It has been like this for about {duration // 365} years, on most days."))
    else:
        turns.append((Role.PATIENT, f"For about {duration} days now."))
    for line in exclusion_lines:
        turns.append((Role.PATIENT, line))
    turns.append((Role.CLINICIAN, rng.choice(CLOSERS)))
    return [Utterance(role=role, text=text, turn_index=i) for i, (role, text) in enumerate(turns)]


def build_corpus(kg, criteria_map) -> list[Dialogue]:
    rng = random.Random(SEED)
    dialogues = []
    for index, scenario in enumerate(SCENARIOS):
        symptom_ids, duration, exclusion_ids = pick_symptoms(rng, scenario)
        phrases = [rng.choice(PHRASES[sid]) for sid in symptom_ids]
        for phrase, sid in zip(phrases, symptom_ids):
            resolved = lookup_entity(kg, phrase)
            if resolved != frozenset({sid}):
                raise SystemExit(f"phrase '{phrase}' resolves to {sorted(resolved)}, wanted {sid}")
        exclusion_lines = [EXCLUSION_PHRASES[e] for e in exclusion_ids]

        dialogue = Dialogue(
            id=f"dlg{index:03d}",
            turns=tuple(build_turns(rng, phrases, duration, exclusion_lines)),
            age_years=AGES[index % len(AGES)],
            gender=GENDERS[index % len(GENDERS)],
            gold=GoldAnnotation(
                depression_risk={"mdd": 3, "pdd": 2, "adjustment": 1}.get(scenario, 0),
                suicide_risk=3 if "sym_suicidal_ideation" in symptom_ids else 0,
                symptoms=tuple(phrases),
                exclusions=tuple(
                    kg.entities[e].canonical_name for e in exclusion_ids
                ),
                duration_days=duration,
            ),
        )

        gold_symptoms, gold_exclusions, gold_duration = resolve_gold(kg, dialogue)
        label = silver_label(criteria_map, kg, gold_symptoms, gold_exclusions, gold_duration)
        expected = {
            "mdd": "dis_mdd",
            "pdd": "dis_pdd",
            "adjustment": "dis_adjustment",
        }.get(scenario, "no_diagnosis")
        if label != expected:
            raise SystemExit(
                f"dialogue {dialogue.id} ({scenario}): silver label {label} != expected {expected}"
            )
        dialogues.append(
            Dialogue(
                id=dialogue.id,
                turns=dialogue.turns,
                age_years=dialogue.age_years,
                gender=dialogue.gender,
                gold=dialogue.gold,
                silver_label=label,
            )
        )
    return dialogues


def main() -> None:
    fixtures = ROOT / "fixtures"
    kg = load_kg(fixtures / "kg.jsonl")
    criteria_map = load_criteria(fixtures / "criteria.jsonl", kg)
    config = ScoringConfig()

    dialogues = build_corpus(kg, criteria_map)
    save_dialogues(fixtures / "corpus.jsonl", dialogues)
    print(f"wrote corpus with {len(dialogues)} dialogues")

    faithful = generate_scripts(kg, criteria_map, dialogues, config)
    write_script_file(fixtures / "stub_scripts_egdr.jsonl", faithful)
    print(f"wrote {len(faithful)} faithful stub responses")

    # every 4th dialogue with a disorder silver label answers flawed
    flawed_ids = frozenset(
        d.id
        for i, d in enumerate(dialogues)
        if i % 4 == 0 and d.silver_label != "no_diagnosis"
    )
    mixed = generate_scripts(kg, criteria_map, dialogues, config, flawed_ids=flawed_ids)
    write_script_file(fixtures / "stub_scripts_mixed.jsonl", mixed)
    print(f"wrote {len(mixed)} mixed stub responses ({len(flawed_ids)} flawed dialogues)")


if __name__ == "__main__":
    main()
