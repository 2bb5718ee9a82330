"""Post-hoc uncertainty for text-generation models queried as black boxes."""

from .clients import (
    AuditLog,
    ClientError,
    HTTPChatClient,
    ModelClient,
    RetryPolicy,
    SamplingParams,
    TransientError,
)
from .parsing import Answer, parse_answer
from .prompts import MULTI, SINGLE, Prompt, build_prompt
from .responses import (
    ArchivedRecord,
    FingerprintMismatch,
    Generation,
    ResponseSet,
    SamplingError,
    ensemble_response_sets,
    read_archive,
    sample_responses,
    write_archive,
)
from .scoring import ScoredRecord, TaskUncertainty, evaluate_blackbox, score_uncertainty
from .tasks import CATEGORIES, TASKS, TaskSpec, tasks_in_category

__all__ = [
    "Answer",
    "ArchivedRecord",
    "AuditLog",
    "CATEGORIES",
    "ClientError",
    "FingerprintMismatch",
    "Generation",
    "HTTPChatClient",
    "MULTI",
    "ModelClient",
    "Prompt",
    "ResponseSet",
    "RetryPolicy",
    "SINGLE",
    "SamplingError",
    "SamplingParams",
    "ScoredRecord",
    "TASKS",
    "TaskSpec",
    "TaskUncertainty",
    "TransientError",
    "build_prompt",
    "ensemble_response_sets",
    "evaluate_blackbox",
    "parse_answer",
    "read_archive",
    "sample_responses",
    "score_uncertainty",
    "tasks_in_category",
    "write_archive",
]
