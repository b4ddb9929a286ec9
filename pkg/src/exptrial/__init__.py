"""Crash-safe trial management for human-subject experiments.

Load a pre-generated CSV trial plan, hand trials to a stimulus engine one at
a time, persist each result as it arrives, and resume an interrupted session
at the first trial whose outputs are not filled.
"""

__version__ = "0.1.0"

from .csvcodec import load_plan, parse_plan, serialize_plan, sniff_schema
from .errors import TrialError
from .generator import Factor, RandomizationSpec, generate_plan
from .persistence import recover
from .plan import (
    ColumnSchema,
    ResumePoint,
    TrialPlan,
    TrialRecord,
    find_resume_point,
    mark_result,
    participant_rows,
    validate_plan,
)
from .session import Session, SessionConfig, begin_session

__all__ = [
    "ColumnSchema",
    "Factor",
    "RandomizationSpec",
    "ResumePoint",
    "Session",
    "SessionConfig",
    "TrialError",
    "TrialPlan",
    "TrialRecord",
    "begin_session",
    "find_resume_point",
    "generate_plan",
    "load_plan",
    "mark_result",
    "parse_plan",
    "participant_rows",
    "recover",
    "serialize_plan",
    "sniff_schema",
    "validate_plan",
]
