import itertools
import math

import numpy as np
import pytest

from diagkit.claims import ScoringConfig
from diagkit.confidence import (
    ConfidenceReport,
    LogicTrace,
    diagnosis_confidence_score,
    logic_consistency_score,
    parse_logic_trace,
    score_reasoning,
)
from diagkit.criteria import NO_DIAGNOSIS
from diagkit.egdr import DiagnosticHypothesis
from diagkit.errors import (
    DomainError,
    EmptyReasoning,
    MalformedTrace,
    StageError,
    UnknownDisorder,
)
from diagkit.providers import EmbeddingVector, text_hash
from diagkit.stubgen import CallableProvider, SyntheticResponder
from diagkit.egdr import run_egdr
from diagkit.datasets import Dialogue, GoldAnnotation, Role, Utterance
from diagkit.templates import load_template

FIVE_WITH_CORE = frozenset(
    {"sym_depressed_mood", "sym_fatigue", "sym_insomnia", "sym_concentration", "sym_worthlessness"}
)
FOUR_NO_CORE = frozenset(
    {"sym_fatigue", "sym_insomnia", "sym_concentration", "sym_appetite_change"}
)


def make_trace(conclusion, symptoms, count_met=None, core_met=None, exclusions_clear=None,
               exclusions=frozenset(), duration=21, assertion_disorder=None):
    return LogicTrace(
        conclusion=conclusion,
        claimed_symptoms=frozenset(symptoms),
        claimed_exclusions=frozenset(exclusions),
        claimed_duration_days=duration,
        count_met=count_met,
        core_met=core_met,
        exclusions_clear=exclusions_clear,
        assertion_disorder=assertion_disorder or (conclusion if conclusion != NO_DIAGNOSIS else None),
    )


# The four rubric fixtures -----------------------------------------------


def test_lcs_level_0_manufactured_conclusion(criteria_map, kg):
    # four symptoms, no core, trace asserts the checks passed and concludes
    # the disorder anyway
    trace = make_trace("dis_mdd", FOUR_NO_CORE, count_met=True, core_met=True, exclusions_clear=True)
    assert logic_consistency_score(trace, criteria_map, kg) == 0


def test_lcs_level_1_wrong_check_and_wrong_conclusion(criteria_map, kg):
    # criteria actually indicate the disorder; the trace mis-asserts the core
    # check and walks away from the right conclusion
    trace = make_trace(
        NO_DIAGNOSIS, FIVE_WITH_CORE, count_met=True, core_met=False, exclusions_clear=True,
        assertion_disorder="dis_mdd",
    )
    assert logic_consistency_score(trace, criteria_map, kg) == 1


def test_lcs_level_2_wrong_check_but_right_conclusion(criteria_map, kg):
    trace = make_trace("dis_mdd", FIVE_WITH_CORE, count_met=True, core_met=False, exclusions_clear=True)
    assert logic_consistency_score(trace, criteria_map, kg) == 2


def test_lcs_level_3_fully_correct(criteria_map, kg):
    trace = make_trace("dis_mdd", FIVE_WITH_CORE, count_met=True, core_met=True, exclusions_clear=True)
    assert logic_consistency_score(trace, criteria_map, kg) == 3


def test_lcs_missing_assertion_caps_at_2(criteria_map, kg):
    trace = make_trace("dis_mdd", FIVE_WITH_CORE, count_met=True, core_met=True, exclusions_clear=None)
    assert logic_consistency_score(trace, criteria_map, kg) == 2


def test_lcs_unknown_disorder(criteria_map, kg):
    trace = make_trace("dis_ghost", FIVE_WITH_CORE)
    with pytest.raises(UnknownDisorder):
        logic_consistency_score(trace, criteria_map, kg)


def test_lcs_correct_conclusion_without_assertions_is_2(criteria_map, kg):
    trace = make_trace("dis_mdd", FIVE_WITH_CORE)
    assert logic_consistency_score(trace, criteria_map, kg) == 2


def test_lcs_correcting_assertions_never_lowers_grade(criteria_map, kg):
    # exhaustive over assertion states and two conclusions on a fixed oracle
    states = (None, True, False)
    for symptoms in (FIVE_WITH_CORE, FOUR_NO_CORE):
        for conclusion in ("dis_mdd", NO_DIAGNOSIS):
            oracle = {
                "count_met": len(symptoms) >= 5,
                "core_met": "sym_depressed_mood" in symptoms,
                "exclusions_clear": True,
            }
            for count, core, excl in itertools.product(states, repeat=3):
                trace = make_trace(
                    conclusion, symptoms, count_met=count, core_met=core,
                    exclusions_clear=excl,
                    assertion_disorder="dis_mdd",
                )
                base = logic_consistency_score(trace, criteria_map, kg)
                for field, value in (("count_met", count), ("core_met", core), ("exclusions_clear", excl)):
                    if value is None or value == oracle[field]:
                        continue
                    fixed = make_trace(
                        conclusion, symptoms,
                        count_met=oracle["count_met"] if field == "count_met" else count,
                        core_met=oracle["core_met"] if field == "core_met" else core,
                        exclusions_clear=oracle["exclusions_clear"] if field == "exclusions_clear" else excl,
                        assertion_disorder="dis_mdd",
                    )
                    assert logic_consistency_score(fixed, criteria_map, kg) >= base


# DCS arithmetic ----------------------------------------------------------


def test_dcs_caption_arithmetic():
    assert diagnosis_confidence_score(0.582, 0, 0.5) == pytest.approx(0.2910, abs=1e-9)


def test_dcs_upper_bound_arithmetic():
    assert diagnosis_confidence_score(0.99, 3, 0.75) == pytest.approx(0.9925, abs=1e-9)


def test_dcs_hand_arithmetic():
    assert diagnosis_confidence_score(0.8, 2, 0.75) == pytest.approx(
        0.75 * 0.8 + 0.25 * (2 / 3), abs=1e-9
    )


def test_dcs_domain_errors():
    with pytest.raises(DomainError):
        diagnosis_confidence_score(1.2, 3, 0.5)
    with pytest.raises(DomainError):
        diagnosis_confidence_score(0.5, 4, 0.5)
    with pytest.raises(DomainError):
        diagnosis_confidence_score(0.5, 3, 1.5)


def test_dcs_affine_identities():
    rng = np.random.default_rng(3)
    for _ in range(200):
        kas0, kas1 = sorted(rng.uniform(0.01, 0.99, size=2))
        lcs = int(rng.integers(0, 4))
        lam = float(rng.uniform(0, 1))
        d0 = diagnosis_confidence_score(kas0, lcs, lam)
        d1 = diagnosis_confidence_score(kas1, lcs, lam)
        if kas1 > kas0:
            assert abs((d1 - d0) / (kas1 - kas0) - lam) < 1e-9
        for l0, l1 in ((0, 1), (1, 2), (2, 3)):
            da = diagnosis_confidence_score(kas0, l0, lam)
            db = diagnosis_confidence_score(kas0, l1, lam)
            assert abs((db - da) - (1 - lam) / 3) < 1e-12
        independent = (lcs / 3) + lam * (kas0 - lcs / 3)
        assert abs(d0 - independent) < 1e-12


def test_dcs_monotonicity():
    assert diagnosis_confidence_score(0.6, 2, 0.75) >= diagnosis_confidence_score(0.5, 2, 0.75)
    assert diagnosis_confidence_score(0.6, 3, 0.75) >= diagnosis_confidence_score(0.6, 2, 0.75)


def test_dcs_lambda_slope_identity():
    # mean over a fixed corpus moves with lambda exactly by mean(kas - lcs/3)
    corpus = [(0.9, 3), (0.7, 1), (0.4, 2), (0.8, 0)]
    for lam0, lam1 in ((0.0, 0.25), (0.25, 0.75), (0.75, 1.0)):
        mean0 = sum(diagnosis_confidence_score(k, l, lam0) for k, l in corpus) / len(corpus)
        mean1 = sum(diagnosis_confidence_score(k, l, lam1) for k, l in corpus) / len(corpus)
        slope = sum(k - l / 3 for k, l in corpus) / len(corpus)
        assert abs((mean1 - mean0) - (lam1 - lam0) * slope) < 1e-12


# parse_logic_trace --------------------------------------------------------


def hypothesis_record(reasoning, final="dis_mdd", symptoms=None, criteria_analysis=None,
                      exclusion=None):
    return DiagnosticHypothesis.from_record(
        {
            "dialogue_id": "d1",
            "prompting_mode": "egdr",
            "extracted_symptoms": {s: [] for s in (symptoms or [])},
            "candidates": [["dis_mdd", 0.5]],
            "criteria_analysis": criteria_analysis or {},
            "exclusion_analysis": exclusion or {"text": "", "exclusions": [], "clear": None},
            "final_diagnosis": final,
            "duration_days": None,
            "reasoning_text": reasoning,
        }
    )


def test_parse_logic_trace_well_formed(kg, criteria_map):
    hypothesis = hypothesis_record(
        "SYMPTOMS:\n- depressed mood\nCRITERIA CHECK:\n- major depressive disorder: "
        "symptom count met; core symptom met\nEXCLUSION CHECK:\n- status: clear\n"
        "FINAL DIAGNOSIS: major depressive disorder\nDURATION: 30 days",
        symptoms=sorted(FIVE_WITH_CORE),
        criteria_analysis={"dis_mdd": {"text": "", "count_met": True, "core_met": True}},
        exclusion={"text": "", "exclusions": [], "clear": True},
    )
    trace = parse_logic_trace(hypothesis)
    assert trace.conclusion == "dis_mdd"
    assert trace.claimed_symptoms == FIVE_WITH_CORE
    assert trace.count_met is True and trace.core_met is True and trace.exclusions_clear is True
    assert trace.claimed_duration_days == 30


def test_parse_logic_trace_missing_final_diagnosis():
    hypothesis = hypothesis_record("just prose", final=None)
    with pytest.raises(MalformedTrace):
        parse_logic_trace(hypothesis)


def test_parse_logic_trace_falls_back_to_text_scan():
    reasoning = (
        "Looking at the picture broadly.\n"
        "symptom count: not met; core symptom: not met\n"
        "status: blocked\n"
        "duration: 10 days\n"
        "FINAL DIAGNOSIS: major depressive disorder"
    )
    trace = parse_logic_trace(hypothesis_record(reasoning))
    assert trace.count_met is False
    assert trace.core_met is False
    assert trace.exclusions_clear is False
    assert trace.claimed_duration_days == 10


def test_parse_logic_trace_ignores_extra_narrative():
    base = (
        "CRITERIA CHECK:\n- major depressive disorder: symptom count met; core symptom met\n"
        "EXCLUSION CHECK:\n- status: clear\nFINAL DIAGNOSIS: major depressive disorder"
    )
    noisy = (
        "Let me think about this case at length first.\n"
        "CRITERIA CHECK:\n- major depressive disorder: symptom count met; core symptom met\n"
        "Incidentally, the patient enjoys gardening, which is unrelated.\n"
        "EXCLUSION CHECK:\n- status: clear\n"
        "And one more digression before concluding.\n"
        "FINAL DIAGNOSIS: major depressive disorder"
    )
    clean = parse_logic_trace(hypothesis_record(base, symptoms=["sym_fatigue"]))
    noisy_trace = parse_logic_trace(hypothesis_record(noisy, symptoms=["sym_fatigue"]))
    assert clean == noisy_trace


# score_reasoning ----------------------------------------------------------


class MappedEmbedder:
    """Exact-vector test double; unmapped texts share one default vector."""

    def __init__(self, mapping, default):
        self.mapping = {k: np.asarray(v, dtype=np.float64) for k, v in mapping.items()}
        self.default = np.asarray(default, dtype=np.float64)

    def embed_text(self, text):
        values = self.mapping.get(text, self.default)
        return EmbeddingVector(values=values, source_hash=text_hash(text))


def test_score_reasoning_low_confidence_case(kg, criteria_map):
    """Weakly grounded four-symptom reasoning concluding the disorder: the
    logic grade collapses to 0 and the attribution score lands near 0.582,
    giving a confidence score of 0.291 at an even blend."""
    reasoning = (
        "The overall picture seems severe. "
        "Sleep disturbance was reported. "
        "Fatigue persists most days. "
        "Concentration difficulty was noted."
    )
    hypothesis = hypothesis_record(
        reasoning,
        symptoms=sorted(FOUR_NO_CORE),
        criteria_analysis={"dis_mdd": {"text": "", "count_met": True, "core_met": True}},
        exclusion={"text": "", "exclusions": [], "clear": True},
    )

    claim_texts = [
        "The overall picture seems severe.",
        "Sleep disturbance was reported.",
        "Fatigue persists most days.",
        "Concentration difficulty was noted.",
    ]
    labels = {
        claim_texts[0]: "Attributable",
        claim_texts[1]: "No Attribution",
        claim_texts[2]: "No Attribution",
        claim_texts[3]: "No Attribution",
    }

    def scripted(request):
        if request.system_text == load_template("decompose"):
            return "\n".join(claim_texts)
        body = request.messages[0][1]
        claim = body.splitlines()[0].removeprefix("Claim: ")
        return labels[claim]

    # first claim embeds at cosine 1/3 to every verbalized edge; its entity
    # set is empty so EPR is 0, making TMS 1/6 and the weight 2/6
    third = [1.0 / 3.0, math.sqrt(1 - 1 / 9)]
    embedder = MappedEmbedder({claim_texts[0]: [1.0, 0.0]}, default=third)

    config = ScoringConfig(lambda_=0.5)
    report = score_reasoning(
        hypothesis, kg, criteria_map, config, CallableProvider(scripted), embedder
    )

    expected_kas = 1.0 / (1.0 + math.exp(-1.0 / 3.0))
    assert report.lcs == 0
    assert report.kas == pytest.approx(expected_kas, abs=1e-9)
    assert report.kas == pytest.approx(0.582, abs=0.01)
    assert report.dcs == pytest.approx(0.291, abs=0.005)
    assert report.dcs == pytest.approx(0.5 * report.kas, abs=1e-12)


def test_score_reasoning_fully_grounded_case(kg, criteria_map):
    dialogue = Dialogue(
        id="d9",
        turns=(
            Utterance(Role.CLINICIAN, "What brings you in?", 0),
            Utterance(
                Role.PATIENT,
                "I've been dealing with feeling down, loss of interest, can't sleep, "
                "tired all the time and feeling worthless.",
                1,
            ),
            Utterance(Role.CLINICIAN, "Since when?", 2),
            Utterance(Role.PATIENT, "For about 21 days now.", 3),
        ),
        gold=GoldAnnotation(
            symptoms=(
                "feeling down", "loss of interest", "can't sleep",
                "tired all the time", "feeling worthless",
            ),
            duration_days=21,
        ),
    )
    config = ScoringConfig()
    provider = SyntheticResponder(kg, criteria_map, dialogue, config)
    hypothesis = run_egdr(dialogue, provider, kg, criteria_map, config)
    report = score_reasoning(hypothesis, kg, criteria_map, config)
    assert report.lcs == 3
    assert report.dcs >= 0.9
    assert report.dcs == pytest.approx(
        config.lambda_ * report.kas + (1 - config.lambda_) * report.lcs / 3, abs=1e-12
    )


def test_score_reasoning_empty_reasoning_carries_stage_label(kg, criteria_map):
    hypothesis = hypothesis_record("   ")
    with pytest.raises(StageError) as excinfo:
        score_reasoning(hypothesis, kg, criteria_map, ScoringConfig())
    assert excinfo.value.stage == "decompose_claims"
    assert isinstance(excinfo.value.cause, EmptyReasoning)


def test_report_record_round_trip(kg, criteria_map):
    hypothesis = hypothesis_record(
        "major depressive disorder has symptom insomnia. FINAL DIAGNOSIS: major depressive disorder",
        symptoms=sorted(FIVE_WITH_CORE),
    )
    report = score_reasoning(hypothesis, kg, criteria_map, ScoringConfig())
    record = report.to_record()
    assert set(record) == {
        "dialogue_id", "diagnosis", "kas", "lcs", "dcs",
        "claims", "evidence_triplet_ids", "config",
    }
    assert record["config"] == {"alpha": 0.5, "lambda": 0.75}
    restored = ConfidenceReport.from_record(record)
    assert restored.kas == report.kas
    assert restored.claim_scores == report.claim_scores
