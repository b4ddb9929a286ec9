"""Session runtime: serve one participant's trials in order, persist each
result, and pick up where an interrupted session stopped.

    session = begin_session(SessionConfig("plan.csv", participant=3,
                                          input_count=2, output_count=1))
    while (trial := session.current_trial()) is not None:
        response = run_stimulus(dict(trial.inputs))
        session.record_result([response])
    session.close()
"""

from __future__ import annotations

import logging
import os
import secrets
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import faults
from .csvcodec import load_plan, serialize_plan
from .errors import PlanError, PlanInvalid, SessionError
from .persistence import (
    LOCK_STOLEN,
    RESULT,
    SESSION_END,
    SESSION_START,
    SKIP,
    Journal,
    JournalEntry,
    acquire_lock,
    atomic_rewrite,
    default_journal_path,
    release_lock,
)
from .plan import (
    TrialPlan,
    check_outputs,
    find_resume_point,
    mark_result,
    participant_rows,
    validate_plan,
)

log = logging.getLogger(__name__)

NO_LOCK_ENV = "EXPTRIAL_NO_LOCK"
SKIP_PREFIX = "SKIPPED:"


def new_session_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")[:-3]
    return f"{stamp}Z-{secrets.token_hex(4)}"


@dataclass
class SessionConfig:
    plan_path: Path
    participant: int
    input_count: int
    output_count: int
    start_from: Optional[int] = None  # a trialNumber, not a row index
    journal_path: Optional[Path] = None

    def __post_init__(self):
        self.plan_path = Path(self.plan_path)
        self.journal_path = (
            default_journal_path(self.plan_path)
            if self.journal_path is None
            else Path(self.journal_path)
        )


@dataclass(frozen=True)
class Trial:
    trial_number: int
    inputs: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Status:
    total: int
    completed: int
    remaining: int
    current: Optional[int]


class Session:
    """A running session. Build with :func:`begin_session`."""

    def __init__(self, config: SessionConfig, plan: TrialPlan, cursor: Optional[int],
                 session_id: str, journal: Journal, locked: bool):
        self.config = config
        self.plan = plan
        self.participant = config.participant
        self.cursor = cursor  # position in the participant's rows; None = finished
        self.session_id = session_id
        self.completed_this_session = 0
        self._rows = [i for i, _ in participant_rows(plan, config.participant)]
        self._journal = journal
        self._locked = locked
        self._closed = False
        self.resumed_at = self.current_trial_number

    # -- queries

    @property
    def finished(self) -> bool:
        return self.cursor is None

    @property
    def current_trial_number(self) -> Optional[int]:
        if self.cursor is None:
            return None
        return self.plan.rows[self._rows[self.cursor]].trial_number

    def current_trial(self) -> Optional[Trial]:
        """Inputs of the trial to run now, or None when finished."""
        if self.cursor is None:
            return None
        rec = self.plan.rows[self._rows[self.cursor]]
        return Trial(rec.trial_number, tuple(zip(self.plan.schema.input_columns, rec.inputs)))

    def status(self) -> Status:
        recs = [self.plan.rows[i] for i in self._rows]
        done = sum(r.complete for r in recs)
        return Status(len(recs), done, len(recs) - done, self.current_trial_number)

    # -- mutations

    def record_result(self, outputs: Sequence[str]) -> None:
        """Persist the current trial's outputs and move to the next open trial."""
        self._require_open()
        self._fill(RESULT, check_outputs(self.plan, outputs))

    def skip_trial(self, reason: str) -> None:
        self._require_open()
        value = SKIP_PREFIX + reason
        self._fill(SKIP, [value] * self.plan.schema.output_count)

    def close(self) -> None:
        """Journal SESSION_END and release the lock."""
        if self._closed:
            return
        try:
            self._journal.append(JournalEntry(SESSION_END, self.session_id, self.participant))
        finally:
            self.abandon()

    def abandon(self) -> None:
        """Release the lock without journaling an orderly end."""
        if self._closed:
            return
        self._closed = True
        if self._locked:
            release_lock(self.config.plan_path, self.session_id)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abandon()

    def _require_open(self) -> None:
        if self._closed:
            raise SessionError("session is closed", code="SESSION_CLOSED")
        if self.cursor is None:
            raise SessionError("all trials are done", code="SESSION_FINISHED")

    def _fill(self, kind: str, outputs: Sequence[str]) -> None:
        plan_row = self._rows[self.cursor]
        rec = self.plan.rows[plan_row]
        new_plan = mark_result(self.plan, plan_row, outputs)
        entry = JournalEntry(
            kind,
            self.session_id,
            self.participant,
            rec.trial_number,
            tuple(zip(self.plan.schema.output_columns, outputs)),
        )
        faults.checkpoint("before_journal_append")
        self._journal.append(entry)
        faults.checkpoint("after_journal_append")
        atomic_rewrite(self.config.plan_path, serialize_plan(new_plan))
        faults.checkpoint("after_rewrite")
        self.plan = new_plan
        self.completed_this_session += 1
        self.cursor = self._next_open(self.cursor + 1)

    def _next_open(self, start: int) -> Optional[int]:
        for pos in range(start, len(self._rows)):
            if not self.plan.rows[self._rows[pos]].complete:
                return pos
        return None


def locking_enabled() -> bool:
    return os.environ.get(NO_LOCK_ENV) != "1"


def begin_session(config: SessionConfig) -> Session:
    """Open (or resume) a session for ``config.participant``.

    The cursor starts at ``config.start_from`` when given, even if that
    trial is already complete (it will be re-run and overwritten);
    otherwise at the first trial whose outputs are not all filled.
    """
    if config.output_count < 1:
        raise PlanError("output_count must be at least 1", code="NO_OUTPUT_COLUMNS")
    session_id = new_session_id()
    locked = locking_enabled()
    stolen = acquire_lock(config.plan_path, session_id) if locked else None
    try:
        plan = load_plan(config.plan_path, config.input_count, config.output_count)
        report = validate_plan(plan, config.input_count, config.output_count)
        if not report.runnable:
            raise PlanInvalid(report)
        resume = find_resume_point(plan, config.participant)
        rows = participant_rows(plan, config.participant)
        if config.start_from is not None:
            positions = [p for p, (_, r) in enumerate(rows) if r.trial_number == config.start_from]
            if not positions:
                raise SessionError(
                    f"participant {config.participant} has no trial {config.start_from}",
                    code="BAD_START_FROM",
                )
            cursor = positions[0]
            if not resume.complete and cursor < resume.row_index:
                log.warning(
                    "start_from trial %s precedes the first unfinished trial %s; "
                    "completed trials will be re-run and overwritten",
                    config.start_from, resume.trial_number,
                )
        else:
            cursor = resume.row_index
        journal = Journal(config.journal_path, plan.schema.output_columns)
        if stolen is not None:
            journal.append(JournalEntry(LOCK_STOLEN, session_id, config.participant))
        journal.append(JournalEntry(SESSION_START, session_id, config.participant))
    except BaseException:
        if locked:
            release_lock(config.plan_path, session_id)
        raise
    return Session(config, plan, cursor, session_id, journal, locked)
