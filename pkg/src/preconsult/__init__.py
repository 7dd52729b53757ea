"""Proactive pre-consultation engine: coordinated agent roles that gather a
chief complaint, present-illness history, and past history from a patient,
triage them to a department, and judge the result."""

from .errors import (
    BackendTimeoutError,
    BackendUnavailableError,
    EvaluationError,
    GatewayError,
    InputError,
    PreconsultError,
    ProtocolError,
    RoleParseError,
    ScriptMissError,
    SessionError,
)
from .evaluation import (
    DimensionScore,
    EvaluationReport,
    RubricSpec,
    ScoreSummary,
    aggregate_reports,
    evaluate_session,
    load_rubric,
)
from .gateway import (
    BackendConfig,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    HttpOpenAiBackend,
    LlmGateway,
    ScriptedBackend,
    fingerprint,
    script_from_calls,
)
from .orchestrator import (
    ConsultationEngine,
    SessionConfig,
    SessionOutcome,
    SessionState,
    SessionStatus,
    build_engine,
    state_from_dict,
    state_to_dict,
)
from .records import (
    DialogueTranscript,
    MedicalRecord,
    Revision,
    Speaker,
    Turn,
    append_turn,
    apply_record_update,
)
from .roles import (
    AgentRoles,
    ControllerDecision,
    DegradationEvent,
    MonitorAssessment,
    RoleSettings,
    TriagerOutput,
)
from .simulation import (
    BatchReport,
    EhrRecord,
    StrategyComparison,
    compare_strategies,
    load_dataset,
    run_batch,
    run_case,
    virtual_patient_reply,
)
from .tasks import (
    BoundaryRule,
    CompletionScore,
    PendingTaskSet,
    Subtask,
    SubtaskId,
    TaskGroup,
    TaskHierarchy,
    build_default_hierarchy,
    contract_pending_set,
    force_complete,
    init_pending_set,
)
from .triage import (
    DepartmentTaxonomy,
    TriageEvaluation,
    default_taxonomy,
    load_taxonomy,
    score_triage,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
