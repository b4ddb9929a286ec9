"""Analysis-ready export: one row per completed trial."""

from __future__ import annotations

from .csvcodec import format_row
from .persistence import JournalEntry, latest_trial_entries
from .plan import TrialPlan


def export_rows(plan: TrialPlan, entries: list[JournalEntry]) -> list[list[str]]:
    """Join plan inputs with the latest journaled outputs.

    A trial is exported if its plan row is complete or the journal holds a
    result for it. Journaled values win over the plan's; rows completed by
    hand (never journaled) export with empty timestamp and session_id.
    """
    latest = latest_trial_entries(entries)
    names = plan.schema.output_columns
    rows = []
    for rec in plan.rows:
        entry = latest.get(rec.key)
        if entry is not None:
            outputs, ts, sid = entry.output_values(names), entry.timestamp, entry.session_id
        elif rec.complete:
            outputs, ts, sid = rec.outputs, "", ""
        else:
            continue
        rows.append(
            [str(rec.participant), str(rec.trial_number), *rec.inputs, *outputs, ts, sid]
        )
    return rows


def export_header(plan: TrialPlan) -> tuple[str, ...]:
    return plan.schema.header + ("timestamp", "session_id")


def export_csv(plan: TrialPlan, entries: list[JournalEntry]) -> bytes:
    lines = [format_row(export_header(plan))]
    lines.extend(format_row(r) for r in export_rows(plan, entries))
    return "".join(lines).encode("utf-8")
