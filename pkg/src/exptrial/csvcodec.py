"""Reader and writer for plan CSV files.

One fixed dialect: comma delimiter, double-quote quoting with ``""`` for a
literal quote, UTF-8, LF written / LF or CRLF read, header row mandatory.
A cell is quoted on write iff it contains a comma, a quote, CR or LF.
A leading UTF-8 BOM is dropped on read and never written.

The stdlib ``csv`` module is not used: on Python 3.10 its writer leaves a
bare CR unquoted under an LF line terminator and it rejects NUL, both of
which break exact round-tripping of arbitrary cell text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import CsvError, StorageError
from .plan import ColumnSchema, TrialPlan, TrialRecord

BOM = "\ufeff"
_NEEDS_QUOTES = re.compile(r'[,"\r\n]')
_UINT = re.compile(r"[0-9]+", re.ASCII)


@dataclass
class Record:
    line: int  # physical line on which the record starts, 1-based
    cells: list[str]
    terminated: bool  # ended by a line break rather than end of input
    end: int = 0  # text offset just past the record and its line break


class UnterminatedQuote(CsvError):
    """End of input reached inside a quoted cell."""


def decode(data: bytes) -> str:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CsvError(f"invalid UTF-8 at byte {exc.start}") from None
    if text.startswith(BOM):
        text = text[1:]
    return text


def iter_records(text: str) -> Iterable[Record]:
    """Split CSV text into records.

    Completely empty lines are skipped. A bare CR outside quotes is kept as
    cell data; only LF and CRLF end a record.
    """
    i, n, line = 0, len(text), 1
    while i < n:
        if text[i] == "\n":
            i, line = i + 1, line + 1
            continue
        if text.startswith("\r\n", i):
            i, line = i + 2, line + 1
            continue
        start_line = line
        cells: list[str] = []
        while True:
            # one cell
            if i < n and text[i] == '"':
                i += 1
                buf = []
                while True:
                    j = text.find('"', i)
                    if j < 0:
                        raise UnterminatedQuote(
                            f"line {start_line}: quoted cell never closed",
                            line=start_line,
                        )
                    buf.append(text[i:j])
                    line += text.count("\n", i, j)
                    if text.startswith('""', j):
                        buf.append('"')
                        i = j + 2
                    else:
                        i = j + 1
                        break
                cells.append("".join(buf))
                if i < n and text[i] not in ",\n" and not text.startswith("\r\n", i):
                    raise CsvError(
                        f"line {line}: unexpected {text[i]!r} after closing quote",
                        line=line,
                    )
            else:
                j = i
                while j < n and text[j] not in ',"\n':
                    if text[j] == "\r" and text.startswith("\r\n", j):
                        break
                    j += 1
                if j < n and text[j] == '"':
                    raise CsvError(
                        f"line {line}: quote inside an unquoted cell", line=line
                    )
                cells.append(text[i:j])
                i = j
            if i >= n:
                yield Record(start_line, cells, False, i)
                return
            if text[i] == ",":
                i += 1
                continue
            i += 2 if text[i] == "\r" else 1
            line += 1
            yield Record(start_line, cells, True, i)
            break


def format_cell(value: str) -> str:
    if _NEEDS_QUOTES.search(value):
        return '"' + value.replace('"', '""') + '"'
    return value


def format_row(cells: Sequence[str]) -> str:
    if len(cells) == 1 and cells[0] == "":
        # a bare empty line would be skipped on read
        return '""\n'
    return ",".join(format_cell(c) for c in cells) + "\n"


def _read_header(text: str) -> tuple[Optional[Record], Iterable[Record]]:
    records = iter_records(text)
    for first in records:
        return first, records
    return None, records


def sniff_schema(data: bytes) -> tuple[int, list[str]]:
    """Column count and names of the header row, without reading data rows."""
    header, _ = _read_header(decode(data))
    if header is None:
        raise CsvError("file is empty", code="EMPTY_FILE")
    return len(header.cells), header.cells


def _parse_id(cell: str, name: str, row: int, line: int) -> int:
    if not _UINT.fullmatch(cell):
        raise CsvError(
            f"row {row} (line {line}): {name} {cell!r} is not a non-negative integer",
            code="NON_INTEGER_ID",
            row=row,
            line=line,
            column=name,
        )
    return int(cell)


def parse_plan(
    data: bytes, expected_inputs: int, expected_outputs: int, source_path=None
) -> TrialPlan:
    """Parse plan bytes; the header is split into roles by position.

    Columns 0-1 are the ids, the next ``expected_inputs`` are inputs and all
    remaining columns are outputs. ``expected_outputs`` is not enforced here
    (``validate_plan`` reports a mismatch); it only sets the minimum header
    width together with ``expected_inputs``.
    """
    header, records = _read_header(decode(data))
    if header is None:
        raise CsvError("file is empty", code="EMPTY_FILE")
    names = header.cells
    needed = 2 + expected_inputs + 1
    if len(names) < needed:
        raise CsvError(
            f"header has {len(names)} column(s); {expected_inputs} input(s) "
            f"need at least {needed} (2 ids + inputs + at least 1 output)",
            code="HEADER_ARITY",
            line=header.line,
        )
    schema = ColumnSchema(
        input_columns=names[2 : 2 + expected_inputs],
        output_columns=names[2 + expected_inputs :],
        id_columns=names[:2],
    )
    width = len(names)
    rows = []
    for row, rec in enumerate(records, start=1):
        if len(rec.cells) != width:
            raise CsvError(
                f"row {row} (line {rec.line}) has {len(rec.cells)} cell(s), "
                f"header has {width}",
                code="RAGGED_ROW",
                row=row,
                line=rec.line,
            )
        cells = rec.cells
        rows.append(
            TrialRecord(
                participant=_parse_id(cells[0], names[0], row, rec.line),
                trial_number=_parse_id(cells[1], names[1], row, rec.line),
                inputs=cells[2 : 2 + expected_inputs],
                outputs=cells[2 + expected_inputs :],
            )
        )
    return TrialPlan(schema, rows, source_path)


def serialize_plan(plan: TrialPlan) -> bytes:
    parts = [format_row(plan.schema.header)]
    for rec in plan.rows:
        cells = [str(rec.participant), str(rec.trial_number), *rec.inputs]
        cells.extend("" if v is None else v for v in rec.outputs)
        parts.append(format_row(cells))
    return "".join(parts).encode("utf-8")


def load_plan(path, expected_inputs: int, expected_outputs: int) -> TrialPlan:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read plan {path}: {exc}", code="IO_ERROR") from exc
    return parse_plan(data, expected_inputs, expected_outputs, source_path=path)
