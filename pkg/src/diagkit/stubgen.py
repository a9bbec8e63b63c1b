"""Deterministic stub scripting support.

Generates scripted chat responses for the staged pipeline from a dialogue's
gold annotations, so end-to-end runs work offline and byte-reproducibly. The
faithful responder answers every stage consistently with the rule engine; the
flawed responder overstates criteria checks and concludes a wrong disorder,
which is useful for calibration-separation experiments.
"""

from __future__ import annotations

from .claims import ScoringConfig
from .criteria import NO_DIAGNOSIS, DisorderCriteria, evaluate_rules, silver_label
from .datasets import Dialogue, resolve_gold
from .egdr import run_egdr
from .errors import ScriptMiss
from .kgstore import KnowledgeGraph
from .providers import ChatProvider, ChatRequest, request_key
from .retrieval import CandidateDisorders, extract_entities, rank_candidate_disorders
from .templates import load_template


class RecordingProvider:
    """Wraps a provider and records every (request key, response) pair."""

    def __init__(self, inner: ChatProvider):
        self.inner = inner
        self.scripts: dict[str, str] = {}
        self.requests: list[ChatRequest] = []

    def chat_complete(self, request: ChatRequest) -> str:
        response = self.inner.chat_complete(request)
        self.requests.append(request)
        self.scripts[request_key(request)] = response
        return response


class CallableProvider:
    """Adapter turning a plain function into a chat provider."""

    def __init__(self, fn):
        self.fn = fn

    def chat_complete(self, request: ChatRequest) -> str:
        return self.fn(request)


class SyntheticResponder:
    """Answers staged prompts for one dialogue from its gold annotations.

    Stages are recognized by their system texts, so the responder needs no
    call counter and tolerates skipped stages.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        criteria_map: dict[str, DisorderCriteria],
        dialogue: Dialogue,
        config: ScoringConfig | None = None,
        flawed: bool = False,
    ):
        self.kg = kg
        self.criteria_map = criteria_map
        self.dialogue = dialogue
        self.config = config or ScoringConfig()
        self.flawed = flawed
        self._stage_by_system = {
            load_template(f"stage{n}", self.config.template_version): n for n in range(1, 6)
        }
        self._stage_by_system[load_template("direct", self.config.template_version)] = -1
        self._stage_by_system[load_template("cot", self.config.template_version)] = -2

        self.symptoms, self.exclusions, self.duration = resolve_gold(kg, dialogue)
        self.candidates: CandidateDisorders = rank_candidate_disorders(kg, self.symptoms)
        self.silver = silver_label(criteria_map, kg, self.symptoms, self.exclusions, self.duration)

    def chat_complete(self, request: ChatRequest) -> str:
        stage = self._stage_by_system.get(request.system_text)
        if stage is None:
            raise ScriptMiss("synthetic responder got a prompt from an unknown stage")
        if stage == -1:
            return self._direct()
        if stage == -2:
            return self._cot()
        return getattr(self, f"_stage{stage}")()

    # stage responses ------------------------------------------------------

    def _symptom_turns(self, symptom_id: str) -> list[int]:
        turns = []
        for turn in self.dialogue.turns:
            if symptom_id in extract_entities(turn.text, self.kg):
                turns.append(turn.turn_index)
        return turns

    def _symptom_lines(self) -> str:
        if not self.symptoms:
            return "- none"
        lines = []
        for symptom_id in sorted(self.symptoms):
            name = self.kg.name_of(symptom_id)
            turns = self._symptom_turns(symptom_id)
            suffix = f" (turn {turns[0]})" if turns else ""
            lines.append(f"- {name}{suffix}")
        return "\n".join(lines)

    def _stage1(self) -> str:
        text = f"SYMPTOMS:\n{self._symptom_lines()}"
        if self.duration is not None:
            text += f"\nDURATION: {self.duration} days"
        return text

    def _stage2(self) -> str:
        if not self.candidates:
            return "CANDIDATES:\n- none"
        lines = []
        for disorder_id, score in self.candidates.ranked:
            crit = self.criteria_map.get(disorder_id)
            overlap = len(self.symptoms & crit.symptoms) if crit else 0
            lines.append(
                f"- {self.kg.name_of(disorder_id)}: matches {overlap} listed "
                f"symptom(s), overlap score {score:.3f}."
            )
        return "CANDIDATES:\n" + "\n".join(lines)

    def _outcome(self, disorder_id: str):
        return evaluate_rules(
            self.criteria_map[disorder_id], self.symptoms, self.exclusions, self.duration
        )

    def _stage3(self) -> str:
        lines = []
        for disorder_id in self.candidates.ids:
            if disorder_id not in self.criteria_map:
                continue
            if self.flawed:
                count_met, core_met = True, True
            else:
                outcome = self._outcome(disorder_id)
                count_met, core_met = outcome.count_met, outcome.core_met
            lines.append(
                f"- {self.kg.name_of(disorder_id)}: "
                f"symptom count {'met' if count_met else 'not met'}; "
                f"core symptom {'met' if core_met else 'not met'}"
            )
        return "CRITERIA CHECK:\n" + ("\n".join(lines) if lines else "- none")

    def _reference_disorder(self) -> str | None:
        """Disorder whose outcome the exclusion status should describe."""
        if self.silver != NO_DIAGNOSIS:
            return self.silver
        for disorder_id in self.candidates.ids:
            if disorder_id in self.criteria_map:
                return disorder_id
        return None

    def _stage4(self) -> str:
        if self.flawed:
            return "EXCLUSION CHECK:\n- status: clear\n- active: none"
        reference = self._reference_disorder()
        clear = True
        if reference is not None:
            clear = self._outcome(reference).exclusions_clear
        active_names = sorted(self.kg.name_of(e) for e in self.exclusions)
        active = ", ".join(active_names) if active_names else "none"
        status = "clear" if clear else "blocked"
        return f"EXCLUSION CHECK:\n- status: {status}\n- active: {active}"

    def _grounded_reasoning(self, disorder_id: str | None) -> str:
        """Sentences asserting the supported disorder-symptom links."""
        sentences = []
        if disorder_id is not None and disorder_id in self.criteria_map:
            crit = self.criteria_map[disorder_id]
            name = self.kg.name_of(disorder_id)
            for symptom_id in sorted(self.symptoms & crit.symptoms):
                sentences.append(f"{name} has symptom {self.kg.name_of(symptom_id)}.")
        return " ".join(sentences)

    def _flawed_conclusion(self) -> str:
        for disorder_id in self.candidates.ids:
            if disorder_id == self.silver or disorder_id not in self.criteria_map:
                continue
            if not self._outcome(disorder_id).indicated:
                return disorder_id
        return NO_DIAGNOSIS

    def _stage5(self) -> str:
        if self.flawed:
            conclusion = self._flawed_conclusion()
            name = (
                "No Diagnosis" if conclusion == NO_DIAGNOSIS else self.kg.name_of(conclusion)
            )
            reasoning = (
                "The patient denies depressed mood and denies loss of interest. "
                "The weather has been gloomy for weeks. "
                "The clinic was busy on the day of the visit."
            )
            return f"FINAL DIAGNOSIS: {name}\nREASONING: {reasoning}"
        if self.silver == NO_DIAGNOSIS:
            reasoning = (
                "No candidate disorder satisfies its full criteria on the "
                "reported symptoms, so no diagnosis is assigned."
            )
            return f"FINAL DIAGNOSIS: No Diagnosis\nREASONING: {reasoning}"
        name = self.kg.name_of(self.silver)
        grounded = self._grounded_reasoning(self.silver)
        reasoning = (
            f"{grounded} The symptom count and core symptom requirements are met "
            f"and no exclusion applies, so {name} is diagnosed."
        )
        return f"FINAL DIAGNOSIS: {name}\nREASONING: {reasoning}"

    # baseline responses ---------------------------------------------------

    def _direct(self) -> str:
        name = "No Diagnosis" if self.silver == NO_DIAGNOSIS else self.kg.name_of(self.silver)
        return f"SYMPTOMS:\n{self._symptom_lines()}\nFINAL DIAGNOSIS: {name}"

    def _cot(self) -> str:
        name = "No Diagnosis" if self.silver == NO_DIAGNOSIS else self.kg.name_of(self.silver)
        grounded = self._grounded_reasoning(
            self.silver if self.silver != NO_DIAGNOSIS else self._reference_disorder()
        )
        reasoning = grounded or "The reported symptoms do not satisfy any criteria set."
        return f"REASONING: {reasoning}\nFINAL DIAGNOSIS: {name}"


def generate_scripts(
    kg: KnowledgeGraph,
    criteria_map: dict[str, DisorderCriteria],
    dialogues: list[Dialogue],
    config: ScoringConfig | None = None,
    flawed_ids: frozenset[str] | set[str] = frozenset(),
) -> dict[str, str]:
    """Produce a stub script covering a full staged run over the dialogues.

    Each dialogue is actually run through the pipeline with a recording
    wrapper, so the generated script is guaranteed to cover exactly the
    requests the pipeline will make.
    """
    config = config or ScoringConfig()
    scripts: dict[str, str] = {}
    for dialogue in dialogues:
        responder = SyntheticResponder(
            kg, criteria_map, dialogue, config, flawed=dialogue.id in flawed_ids
        )
        recorder = RecordingProvider(responder)
        run_egdr(dialogue, recorder, kg, criteria_map, config)
        scripts.update(recorder.scripts)
    return scripts
