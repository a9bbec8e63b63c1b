"""Knowledge-grounded diagnostic reasoning with claim-level verification.

Two halves: a staged pipeline that turns clinical dialogues into structured
diagnostic hypotheses grounded in a diagnostic-manual knowledge graph, and a
scoring engine that verifies those hypotheses through claim attribution and
rule-based logic consistency, combined into a single confidence score.
"""

from .claims import (
    AttributionLabel,
    Claim,
    ClaimScore,
    ScoringConfig,
    claim_weight,
    classify_attribution,
    decompose_claims,
    entity_pr,
    kas_aggregate,
    triplet_match_score,
)
from .confidence import (
    ConfidenceReport,
    LogicTrace,
    diagnosis_confidence_score,
    logic_consistency_score,
    parse_logic_trace,
    score_reasoning,
)
from .criteria import (
    NO_DIAGNOSIS,
    DisorderCriteria,
    RuleOutcome,
    evaluate_rules,
    load_criteria,
    silver_label,
)
from .datasets import (
    AgeBucket,
    Dialogue,
    GoldAnnotation,
    Role,
    Utterance,
    bucket_age,
    load_dialogues,
)
from .egdr import (
    DiagnosticHypothesis,
    PromptBundle,
    PromptingMode,
    parse_structured_output,
    run_baseline,
    run_egdr,
)
from .evalharness import (
    AblationStats,
    PredictionRecord,
    ablation_sweep,
    compute_metrics,
    dcs_by_correctness,
    emit_report,
    subgroup_accuracy,
)
from .kgstore import (
    Entity,
    EntityKind,
    KnowledgeGraph,
    Relation,
    Triplet,
    load_kg,
    lookup_entity,
    neighbors,
    serialize_kg,
)
from .providers import (
    ChatRequest,
    EmbeddingVector,
    LocalHashEmbedder,
    RemoteChatProvider,
    RemoteEmbedder,
    StubChatProvider,
    cosine,
)
from .retrieval import (
    CandidateDisorders,
    RetrievedEvidence,
    claim_triplet_sim,
    extract_entities,
    rank_candidate_disorders,
    walk_retrieve,
)

__version__ = "0.1.0"
