"""Durable storage: atomic plan rewrites, the results journal, session locks
and crash recovery.

The plan file is the current state and the source of truth for resuming.
The journal is an append-only CSV redo log: every result is appended and
fsynced *before* the plan is rewritten, so a crash between the two steps
can be repaired by ``recover``.
"""

from __future__ import annotations

import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import faults
from .csvcodec import (
    BOM,
    UnterminatedQuote,
    format_row,
    iter_records,
    load_plan,
    serialize_plan,
)
from .errors import CsvError, JournalError, LockError, PlanInvalid, StorageError
from .plan import TrialPlan, is_filled, mark_result, validate_plan

log = logging.getLogger(__name__)

SESSION_START = "SESSION_START"
RESULT = "RESULT"
SKIP = "SKIP"
SESSION_END = "SESSION_END"
LOCK_STOLEN = "LOCK_STOLEN"
KINDS = (SESSION_START, RESULT, SKIP, SESSION_END, LOCK_STOLEN)
TRIAL_KINDS = (RESULT, SKIP)

JOURNAL_FIXED = ("seq", "kind", "session_id", "partiNumber", "trialNumber", "timestamp")


def default_journal_path(plan_path) -> Path:
    """``trials.csv`` -> ``trials.results.csv``."""
    plan_path = Path(plan_path)
    if plan_path.suffix.lower() == ".csv":
        return plan_path.with_name(plan_path.stem + ".results.csv")
    return plan_path.with_name(plan_path.name + ".results.csv")


def lock_path(plan_path) -> Path:
    return Path(str(plan_path) + ".lock")


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY | getattr(os, "O_DIRECTORY", 0))
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


# -- atomic rewrite ---------------------------------------------------------

_TMP_SUFFIX = ".tmp"


def _tmp_prefix(path: Path) -> str:
    return f".{path.name}."


def atomic_rewrite(path, data: bytes) -> None:
    """Replace the file at ``path`` with ``data``: old or new, never a mix."""
    path = Path(path)
    directory = path.parent
    try:
        fd, tmp = tempfile.mkstemp(
            prefix=_tmp_prefix(path), suffix=_TMP_SUFFIX, dir=directory
        )
    except OSError as exc:
        raise StorageError(f"cannot create temp file next to {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            half = len(data) // 2
            fh.write(data[:half])
            fh.flush()
            faults.checkpoint("mid_rewrite")
            fh.write(data[half:])
            fh.flush()
            os.fsync(fh.fileno())
        if path.exists():
            os.chmod(tmp, path.stat().st_mode & 0o7777)
        else:
            os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise StorageError(f"cannot rewrite {path}: {exc}") from exc
    _fsync_dir(directory)


def remove_stale_temps(path) -> list[Path]:
    """Delete temp files left behind by an interrupted ``atomic_rewrite``."""
    path = Path(path)
    removed = []
    for p in path.parent.glob(_tmp_prefix(path) + "*" + _TMP_SUFFIX):
        try:
            p.unlink()
            removed.append(p)
        except OSError:
            pass
    return removed


# -- journal ----------------------------------------------------------------


@dataclass(frozen=True)
class JournalEntry:
    kind: str
    session_id: str
    participant: int
    trial_number: Optional[int] = None
    outputs: Optional[tuple[tuple[str, str], ...]] = None
    timestamp: str = ""
    seq: int = 0

    @property
    def key(self) -> tuple[int, Optional[int]]:
        return (self.participant, self.trial_number)

    def output_values(self, names: Sequence[str]) -> tuple[str, ...]:
        """Output values ordered by ``names``."""
        values = dict(self.outputs or ())
        try:
            return tuple(values[n] for n in names)
        except KeyError as exc:
            raise JournalError(
                f"journal entry {self.seq} has no value for output {exc.args[0]!r}"
            ) from None


@dataclass
class JournalScan:
    output_columns: tuple[str, ...]
    entries: list[JournalEntry]
    torn_tail: bool
    good_bytes: int  # length of the valid prefix


def _entry_cells(entry: JournalEntry, output_columns: Sequence[str]) -> list[str]:
    cells = [
        str(entry.seq),
        entry.kind,
        entry.session_id,
        str(entry.participant),
        "" if entry.trial_number is None else str(entry.trial_number),
        entry.timestamp,
    ]
    if entry.outputs is None:
        cells.extend("" for _ in output_columns)
    else:
        cells.extend(entry.output_values(output_columns))
    return cells


def _parse_entry(cells: list[str], output_columns: tuple[str, ...], line: int) -> JournalEntry:
    def bad(msg):
        return JournalError(f"line {line}: {msg}", line=line)

    width = len(JOURNAL_FIXED) + len(output_columns)
    if len(cells) != width:
        raise bad(f"{len(cells)} cell(s), header has {width}")
    seq, kind, session_id, parti, trial, ts = cells[: len(JOURNAL_FIXED)]
    outs = cells[len(JOURNAL_FIXED) :]
    if not seq.isdigit() or not parti.isdigit():
        raise bad("seq and partiNumber must be non-negative integers")
    if kind not in KINDS:
        raise bad(f"unknown entry kind {kind!r}")
    if kind in TRIAL_KINDS:
        if not trial.isdigit():
            raise bad(f"{kind} entry needs a trialNumber")
        if not all(is_filled(v) for v in outs):
            raise bad(f"{kind} entry has an empty output")
        return JournalEntry(
            kind, session_id, int(parti), int(trial),
            tuple(zip(output_columns, outs)), ts, int(seq),
        )
    if trial or any(outs):
        raise bad(f"{kind} entry must not carry a trial or outputs")
    return JournalEntry(kind, session_id, int(parti), None, None, ts, int(seq))


def scan_journal(data: bytes) -> JournalScan:
    torn = False
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        if exc.reason != "unexpected end of data":
            raise JournalError(f"invalid UTF-8 at byte {exc.start}") from None
        # write cut inside a multi-byte character
        text = data[: exc.start].decode("utf-8")
        torn = True
    offset = 0
    if text.startswith(BOM):
        text = text[1:]
        offset = len(BOM.encode())

    records = []
    try:
        for rec in iter_records(text):
            records.append(rec)
    except UnterminatedQuote:
        torn = True
    except CsvError as exc:
        raise JournalError(f"corrupt journal: {exc.message}") from None
    if records and not records[-1].terminated:
        records.pop()
        torn = True

    if not records:
        return JournalScan((), [], torn, 0)
    header = records[0]
    if tuple(header.cells[: len(JOURNAL_FIXED)]) != JOURNAL_FIXED:
        raise JournalError(f"bad journal header {header.cells!r}")
    output_columns = tuple(header.cells[len(JOURNAL_FIXED) :])
    entries = []
    last_seq = 0
    for rec in records[1:]:
        entry = _parse_entry(rec.cells, output_columns, rec.line)
        if entry.seq <= last_seq:
            raise JournalError(
                f"line {rec.line}: sequence number {entry.seq} does not increase",
                line=rec.line,
            )
        last_seq = entry.seq
        entries.append(entry)
    good = offset + len(text[: records[-1].end].encode("utf-8"))
    return JournalScan(output_columns, entries, torn, good)


def read_journal(path) -> tuple[list[JournalEntry], bool]:
    """All complete entries and whether a torn final line was dropped."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        return [], False
    except OSError as exc:
        raise StorageError(f"cannot read journal {path}: {exc}") from exc
    scan = scan_journal(data)
    return scan.entries, scan.torn_tail


class Journal:
    """Appender for one journal file; keeps the sequence counter in memory."""

    def __init__(self, path, output_columns: Sequence[str]):
        self.path = Path(path)
        self.output_columns = tuple(output_columns)
        self.last_seq = 0
        self._ready = False

    def _open(self) -> None:
        try:
            data = self.path.read_bytes()
        except FileNotFoundError:
            data = b""
        except OSError as exc:
            raise StorageError(f"cannot read journal {self.path}: {exc}") from exc
        scan = scan_journal(data)
        if scan.good_bytes and scan.output_columns != self.output_columns:
            raise JournalError(
                f"journal {self.path} has output columns {list(scan.output_columns)}, "
                f"plan has {list(self.output_columns)}"
            )
        if scan.torn_tail:
            log.warning("journal %s: dropping torn final line", self.path)
            try:
                with open(self.path, "r+b") as fh:
                    fh.truncate(scan.good_bytes)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"cannot repair journal {self.path}: {exc}") from exc
        self.last_seq = scan.entries[-1].seq if scan.entries else 0
        self._needs_header = scan.good_bytes == 0
        self._ready = True

    def append(self, entry: JournalEntry) -> JournalEntry:
        """Append ``entry`` with the next sequence number and fsync it."""
        if not self._ready:
            self._open()
        entry = JournalEntry(
            entry.kind,
            entry.session_id,
            entry.participant,
            entry.trial_number,
            entry.outputs,
            entry.timestamp or now_iso(),
            self.last_seq + 1,
        )
        text = format_row(_entry_cells(entry, self.output_columns))
        if self._needs_header:
            text = format_row(JOURNAL_FIXED + self.output_columns) + text
        try:
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, text.encode("utf-8"))
                os.fsync(fd)
            finally:
                os.close(fd)
        except OSError as exc:
            self._ready = False
            raise StorageError(f"cannot append to journal {self.path}: {exc}") from exc
        if self._needs_header:
            _fsync_dir(self.path.parent)
            self._needs_header = False
        self.last_seq = entry.seq
        return entry


def append_journal(path, entry: JournalEntry, output_columns: Sequence[str]) -> JournalEntry:
    return Journal(path, output_columns).append(entry)


# -- locking ----------------------------------------------------------------


@dataclass(frozen=True)
class LockHolder:
    session_id: str
    pid: int


def pid_alive(pid: int) -> bool:
    if pid <= 0:
        return False
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def read_lock(plan_path) -> Optional[LockHolder]:
    try:
        text = lock_path(plan_path).read_text("utf-8")
    except FileNotFoundError:
        return None
    lines = text.split("\n")
    try:
        return LockHolder(lines[0], int(lines[1]))
    except (IndexError, ValueError):
        return LockHolder("", -1)


# a half-written lock file younger than this belongs to a live writer
_UNREADABLE_LOCK_GRACE = 5.0


def acquire_lock(plan_path, session_id: str) -> Optional[LockHolder]:
    """Create ``<plan>.lock``; returns the holder of a stale lock it replaced."""
    path = lock_path(plan_path)
    stolen = None
    for _ in range(3):
        try:
            fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
        except FileExistsError:
            holder = read_lock(plan_path)
            if holder is None:
                continue
            if holder.pid < 0:
                try:
                    age = time.time() - path.stat().st_mtime
                except FileNotFoundError:
                    continue
                if age < _UNREADABLE_LOCK_GRACE:
                    raise LockError(f"{path} is being written by another process")
            elif pid_alive(holder.pid):
                raise LockError(
                    f"{path} held by session {holder.session_id} (pid {holder.pid})",
                    holder=holder,
                )
            log.warning("stealing stale lock %s from pid %s", path, holder.pid)
            try:
                path.unlink()
            except FileNotFoundError:
                pass
            except OSError as exc:
                raise StorageError(f"cannot remove stale lock {path}: {exc}") from exc
            stolen = holder
            continue
        except OSError as exc:
            raise StorageError(f"cannot create lock {path}: {exc}") from exc
        try:
            os.write(fd, f"{session_id}\n{os.getpid()}\n".encode("utf-8"))
            os.fsync(fd)
        except OSError as exc:
            raise StorageError(f"cannot write lock {path}: {exc}") from exc
        finally:
            os.close(fd)
        return stolen
    raise LockError(f"could not acquire {path}: contention")


def release_lock(plan_path, session_id: str) -> None:
    holder = read_lock(plan_path)
    if holder is None or holder.session_id != session_id:
        return
    try:
        lock_path(plan_path).unlink()
    except FileNotFoundError:
        pass
    except OSError as exc:
        raise StorageError(f"cannot remove lock: {exc}") from exc


# -- recovery ---------------------------------------------------------------


@dataclass
class RecoveryReport:
    restored: list[tuple[int, int]] = field(default_factory=list)
    orphans: list[JournalEntry] = field(default_factory=list)
    torn_tail: bool = False

    def summary(self) -> str:
        parts = [f"{len(self.restored)} restored"]
        if self.restored:
            parts[0] += " (" + ", ".join(
                f"trial {t}" if p == self._only_participant() else f"participant {p} trial {t}"
                for p, t in self.restored
            ) + ")"
        if self.orphans:
            parts.append(
                f"{len(self.orphans)} orphan journal entr"
                + ("y" if len(self.orphans) == 1 else "ies")
                + " ("
                + ", ".join(f"participant {e.participant} trial {e.trial_number}" for e in self.orphans)
                + ")"
            )
        if self.torn_tail:
            parts.append("torn final journal line ignored")
        return "; ".join(parts)

    def _only_participant(self):
        ps = {p for p, _ in self.restored}
        return next(iter(ps)) if len(ps) == 1 else None


def latest_trial_entries(entries) -> dict[tuple[int, int], JournalEntry]:
    """Newest RESULT/SKIP entry per (participant, trial) by sequence number."""
    latest: dict[tuple[int, int], JournalEntry] = {}
    for e in entries:
        if e.kind in TRIAL_KINDS:
            prev = latest.get(e.key)
            if prev is None or e.seq > prev.seq:
                latest[e.key] = e
    return latest


def reconcile(plan: TrialPlan, entries) -> tuple[TrialPlan, RecoveryReport]:
    """Fill incomplete plan rows from the journal (pure; no I/O)."""
    report = RecoveryReport()
    index = {rec.key: i for i, rec in enumerate(plan.rows)}
    names = plan.schema.output_columns
    for key, entry in sorted(latest_trial_entries(entries).items(), key=lambda kv: kv[1].seq):
        i = index.get(key)
        if i is None:
            report.orphans.append(entry)
            continue
        if plan.rows[i].complete:
            continue
        plan = mark_result(plan, i, entry.output_values(names))
        report.restored.append(key)
    report.restored.sort(key=lambda k: index[k])
    return plan, report


def recover(plan_path, journal_path, input_count: int, output_count: int):
    """Repair the plan from the journal after a crash.

    Returns ``(plan, RecoveryReport)``. The plan file is rewritten only if
    a row was restored.
    """
    plan = load_plan(plan_path, input_count, output_count)
    report = validate_plan(plan, input_count, output_count)
    if not report.runnable:
        raise PlanInvalid(report)
    remove_stale_temps(plan_path)
    try:
        data = Path(journal_path).read_bytes()
    except FileNotFoundError:
        return plan, RecoveryReport()
    except OSError as exc:
        raise StorageError(f"cannot read journal {journal_path}: {exc}") from exc
    scan = scan_journal(data)
    if scan.entries and scan.output_columns != plan.schema.output_columns:
        raise JournalError(
            f"journal output columns {list(scan.output_columns)} do not match "
            f"plan output columns {list(plan.schema.output_columns)}"
        )
    fixed, rec_report = reconcile(plan, scan.entries)
    rec_report.torn_tail = scan.torn_tail
    if rec_report.restored:
        atomic_rewrite(plan_path, serialize_plan(fixed))
    return fixed, rec_report
