"""Trial-plan data model, validation and resume-point computation.

A plan is the pre-generated table of trials: two id columns
(``partiNumber``, ``trialNumber``), then the stimulus-setting input columns,
then the result output columns. A trial is *complete* once every one of its
output cells holds a non-blank value; a restarted session begins at the
first trial that is not complete.

Plan values are immutable. ``mark_result`` returns a new plan.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import PlanError

ID_COLUMNS = ("partiNumber", "trialNumber")

ERROR = "error"
WARNING = "warning"


def is_filled(value: Optional[str]) -> bool:
    """True if an output cell counts as filled (present and not blank)."""
    return value is not None and value.strip() != ""


def _normalize_output(value: Optional[str]) -> Optional[str]:
    return value if is_filled(value) else None


@dataclass(frozen=True)
class ColumnSchema:
    """Column names of a plan, split by role.

    The input count excludes the two id columns: a header
    ``partiNumber,trialNumber,a,b,c,d,o1,o2,o3`` has 4 inputs and 3 outputs.
    """

    input_columns: tuple[str, ...]
    output_columns: tuple[str, ...]
    id_columns: tuple[str, ...] = ID_COLUMNS

    def __post_init__(self):
        object.__setattr__(self, "input_columns", tuple(self.input_columns))
        object.__setattr__(self, "output_columns", tuple(self.output_columns))
        object.__setattr__(self, "id_columns", tuple(self.id_columns))

    @property
    def input_count(self) -> int:
        return len(self.input_columns)

    @property
    def output_count(self) -> int:
        return len(self.output_columns)

    @property
    def header(self) -> tuple[str, ...]:
        return self.id_columns + self.input_columns + self.output_columns


@dataclass(frozen=True)
class TrialRecord:
    participant: int
    trial_number: int
    inputs: tuple[str, ...]
    outputs: tuple[Optional[str], ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        # blank output cells are the same thing as absent ones
        object.__setattr__(
            self, "outputs", tuple(_normalize_output(v) for v in self.outputs)
        )

    @property
    def complete(self) -> bool:
        return all(is_filled(v) for v in self.outputs)

    @property
    def key(self) -> tuple[int, int]:
        return (self.participant, self.trial_number)


@dataclass(frozen=True)
class TrialPlan:
    schema: ColumnSchema
    rows: tuple[TrialRecord, ...]
    source_path: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def __len__(self) -> int:
        return len(self.rows)

    def participants(self) -> list[int]:
        """Participant ids in order of first appearance."""
        return list(dict.fromkeys(r.participant for r in self.rows))

    def with_rows(self, rows: Iterable[TrialRecord]) -> "TrialPlan":
        return dataclasses.replace(self, rows=tuple(rows))


@dataclass(frozen=True)
class ResumePoint:
    """Where a session for one participant should start.

    ``row_index`` is the position within the participant's own rows and
    ``plan_row`` the position in ``TrialPlan.rows``. All three fields are
    None when every trial is complete.
    """

    row_index: Optional[int] = None
    trial_number: Optional[int] = None
    plan_row: Optional[int] = None

    @property
    def complete(self) -> bool:
        return self.row_index is None


COMPLETE = ResumePoint()


@dataclass(frozen=True)
class Finding:
    severity: str
    code: str
    message: str
    row: Optional[int] = None  # 1-based data row, header excluded
    column: Optional[str] = None

    def describe(self) -> str:
        where = []
        if self.row is not None:
            where.append(f"row {self.row}")
        if self.column is not None:
            where.append(f"column {self.column!r}")
        loc = f" ({', '.join(where)})" if where else ""
        return f"{self.severity.upper()} {self.code}{loc}: {self.message}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    def add(self, severity, code, message, row=None, column=None):
        self.findings.append(Finding(severity, code, message, row, column))

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == ERROR]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == WARNING]

    @property
    def runnable(self) -> bool:
        return not self.errors

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]

    def __len__(self) -> int:
        return len(self.findings)


def validate_plan(
    plan: TrialPlan, expected_inputs: int, expected_outputs: int
) -> ValidationReport:
    """Check a parsed plan against the plan contract.

    Problems are collected into the report, never raised.
    """
    report = ValidationReport()
    schema = plan.schema

    if schema.id_columns != ID_COLUMNS:
        report.add(
            ERROR,
            "BAD_ID_HEADERS",
            f"first two headers must be {list(ID_COLUMNS)}, "
            f"got {list(schema.id_columns)}",
        )
    if schema.input_count != expected_inputs:
        report.add(
            ERROR,
            "ARITY_MISMATCH",
            f"expected {expected_inputs} input column(s), "
            f"plan has {schema.input_count}",
        )
    if schema.output_count == 0:
        report.add(
            ERROR, "NO_OUTPUT_COLUMNS", "plan has no output columns to fill"
        )
    elif schema.output_count != expected_outputs:
        report.add(
            ERROR,
            "ARITY_MISMATCH",
            f"expected {expected_outputs} output column(s), "
            f"plan has {schema.output_count}",
        )

    seen_names: set[str] = set()
    for name in schema.header:
        if name in seen_names:
            report.add(
                ERROR, "DUPLICATE_COLUMN", "column name used twice", column=name
            )
        seen_names.add(name)

    seen_keys: set[tuple[int, int]] = set()
    last_trial: dict[int, int] = {}
    for i, rec in enumerate(plan.rows, start=1):
        if len(rec.inputs) != schema.input_count or (
            len(rec.outputs) != schema.output_count
        ):
            report.add(
                ERROR,
                "ROW_ARITY",
                f"row has {len(rec.inputs)} inputs / {len(rec.outputs)} outputs, "
                f"schema has {schema.input_count} / {schema.output_count}",
                row=i,
            )
        if rec.participant < 0 or rec.trial_number < 0:
            report.add(
                ERROR, "NON_INTEGER_ID", "ids must be non-negative integers", row=i
            )
        if rec.key in seen_keys:
            report.add(
                ERROR,
                "DUPLICATE_TRIAL_KEY",
                f"participant {rec.participant} trial {rec.trial_number} "
                "appears more than once",
                row=i,
            )
        elif (
            rec.participant in last_trial
            and rec.trial_number <= last_trial[rec.participant]
        ):
            report.add(
                ERROR,
                "NON_MONOTONIC_TRIALS",
                f"participant {rec.participant}: trial {rec.trial_number} "
                f"follows trial {last_trial[rec.participant]}",
                row=i,
            )
        seen_keys.add(rec.key)
        last_trial[rec.participant] = max(
            rec.trial_number, last_trial.get(rec.participant, rec.trial_number)
        )

        filled = sum(is_filled(v) for v in rec.outputs)
        if 0 < filled < len(rec.outputs):
            report.add(
                WARNING,
                "PARTIAL_OUTPUT_ROW",
                f"{filled} of {len(rec.outputs)} outputs filled; "
                "the trial will be re-run on resume",
                row=i,
            )
    return report


def participant_rows(
    plan: TrialPlan, participant: int
) -> list[tuple[int, TrialRecord]]:
    """(plan row index, record) pairs for one participant, in file order."""
    return [(i, r) for i, r in enumerate(plan.rows) if r.participant == participant]


def find_resume_point(plan: TrialPlan, participant: int) -> ResumePoint:
    rows = participant_rows(plan, participant)
    if not rows:
        raise PlanError(
            f"participant {participant} has no rows in the plan",
            code="UNKNOWN_PARTICIPANT",
            participant=participant,
        )
    for pos, (plan_row, rec) in enumerate(rows):
        if not rec.complete:
            return ResumePoint(pos, rec.trial_number, plan_row)
    return COMPLETE


def check_outputs(plan: TrialPlan, outputs: Sequence[str]) -> tuple[str, ...]:
    """Validate a list of result values for one row of ``plan``."""
    outputs = tuple(outputs)
    if len(outputs) != plan.schema.output_count:
        raise PlanError(
            f"got {len(outputs)} output value(s), plan has "
            f"{plan.schema.output_count} output column(s)",
            code="OUTPUT_ARITY_MISMATCH",
        )
    for name, value in zip(plan.schema.output_columns, outputs):
        if not isinstance(value, str):
            raise PlanError(
                f"output {name!r} must be text, got {type(value).__name__}",
                code="OUTPUT_TYPE",
            )
        if not is_filled(value):
            raise PlanError(
                f"output {name!r} is empty; empty cells mean 'not yet run'",
                code="EMPTY_OUTPUT_VALUE",
                column=name,
            )
    return outputs


def mark_result(plan: TrialPlan, row_index: int, outputs: Sequence[str]) -> TrialPlan:
    """Return a copy of ``plan`` with row ``row_index`` (plan order) filled."""
    if not 0 <= row_index < len(plan.rows):
        raise PlanError(
            f"row index {row_index} outside 0..{len(plan.rows) - 1}",
            code="ROW_OUT_OF_RANGE",
        )
    outputs = check_outputs(plan, outputs)
    rows = list(plan.rows)
    rows[row_index] = dataclasses.replace(rows[row_index], outputs=outputs)
    return plan.with_rows(rows)
