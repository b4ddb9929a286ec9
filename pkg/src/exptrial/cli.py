"""Command-line interface.

Exit codes: 0 success, 2 validation or spec error (including bad flags),
3 I/O error, 4 lock conflict. Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .csvcodec import load_plan, serialize_plan, sniff_schema
from .errors import LockError, StorageError, TrialError
from .export import export_csv
from .generator import generate_plan
from .persistence import atomic_rewrite, default_journal_path, read_journal, recover
from .plan import find_resume_point, participant_rows, validate_plan
from .protocol import serve, serve_socket
from .session import SessionConfig
from .specfile import read_spec_file

log = logging.getLogger("exptrial")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_LOCKED = 4


class UsageError(TrialError):
    code = "USAGE"


def meta_path(plan_path) -> Path:
    return Path(str(plan_path) + ".meta")


def write_meta(plan_path, inputs: int, outputs: int) -> None:
    atomic_rewrite(meta_path(plan_path), f"inputs={inputs}\noutputs={outputs}\n".encode())


def read_meta(plan_path) -> dict[str, int]:
    try:
        text = meta_path(plan_path).read_text("utf-8")
    except FileNotFoundError:
        return {}
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep and key.strip() in ("inputs", "outputs") and value.strip().isdigit():
            meta[key.strip()] = int(value)
    return meta


def resolve_counts(args) -> tuple[int, int]:
    """Feature counts from --inputs/--outputs, else from ``<plan>.meta``."""
    meta = read_meta(args.plan)
    inputs = args.inputs if args.inputs is not None else meta.get("inputs")
    outputs = args.outputs if args.outputs is not None else meta.get("outputs")
    if inputs is None or outputs is None:
        hint = ""
        try:
            total, names = sniff_schema(Path(args.plan).read_bytes())
            hint = f"; the header has {total} columns: {', '.join(names)}"
        except (OSError, TrialError):
            pass
        raise UsageError(
            f"--inputs and --outputs are required (no {meta_path(args.plan).name} found){hint}"
        )
    return inputs, outputs


def journal_for(args) -> Path:
    return Path(args.journal) if args.journal else default_journal_path(args.plan)


# -- subcommands ------------------------------------------------------------


def cmd_generate(args) -> int:
    spec = read_spec_file(args.spec, seed=args.seed)
    plan = generate_plan(spec)
    atomic_rewrite(args.out, serialize_plan(plan))
    write_meta(args.out, plan.schema.input_count, plan.schema.output_count)
    print(f"wrote {len(plan.rows)} rows to {args.out} (seed {spec.seed}, method {spec.method})")
    return EXIT_OK


def cmd_validate(args) -> int:
    inputs, outputs = resolve_counts(args)
    plan = load_plan(args.plan, inputs, outputs)
    report = validate_plan(plan, inputs, outputs)
    for f in report.findings:
        print(f.describe())
    print(f"{len(report.errors)} errors, {len(report.warnings)} warnings")
    return EXIT_OK if report.runnable else EXIT_INVALID


def cmd_status(args) -> int:
    inputs, outputs = resolve_counts(args)
    plan = load_plan(args.plan, inputs, outputs)
    report = validate_plan(plan, inputs, outputs)
    for f in report.findings:
        print(f.describe(), file=sys.stderr)
    participants = [args.participant] if args.participant is not None else plan.participants()
    for p in participants:
        rows = [r for _, r in participant_rows(plan, p)]
        done = sum(r.complete for r in rows)
        resume = find_resume_point(plan, p)
        where = "session complete" if resume.complete else f"resume at trial {resume.trial_number}"
        print(
            f"participant {p}: {len(rows)} trials, {done} completed, "
            f"{len(rows) - done} remaining; {where}"
        )
    return EXIT_OK if report.runnable else EXIT_INVALID


def cmd_recover(args) -> int:
    inputs, outputs = resolve_counts(args)
    _, report = recover(args.plan, journal_for(args), inputs, outputs)
    print(report.summary())
    return EXIT_OK


def cmd_export(args) -> int:
    inputs, outputs = resolve_counts(args)
    plan = load_plan(args.plan, inputs, outputs)
    report = validate_plan(plan, inputs, outputs)
    if not report.runnable:
        for f in report.errors:
            print(f.describe(), file=sys.stderr)
        return EXIT_INVALID
    entries, torn = read_journal(journal_for(args))
    if torn:
        log.warning("journal has a torn final line; it was ignored")
    data = export_csv(plan, entries)
    if args.out:
        atomic_rewrite(args.out, data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


def cmd_serve(args) -> int:
    inputs, outputs = resolve_counts(args)
    config = SessionConfig(
        args.plan, args.participant, inputs, outputs,
        start_from=args.start_from, journal_path=journal_for(args),
    )
    if args.transport == "socket":
        def ready(port):
            print(f"listening on 127.0.0.1:{port}", file=sys.stderr, flush=True)

        return serve_socket(config, args.port, ready)
    return serve(config, sys.stdin.buffer, sys.stdout.buffer)


def cmd_inspect(args) -> int:
    try:
        data = Path(args.plan).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {args.plan}: {exc}") from exc
    total, names = sniff_schema(data)
    print(f"{total} columns")
    for i, name in enumerate(names):
        print(f"{i:>3}  {name}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _nonneg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text!r} must not be negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exptrial",
        description="Trial plans, crash-safe sessions and result export for experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def plan_args(p, participant=None, counts=True, journal=False):
        p.add_argument("--plan", required=True, help="trial plan CSV")
        if participant is not None:
            p.add_argument("--participant", type=_nonneg, required=participant)
        if counts:
            p.add_argument("--inputs", type=_nonneg, help="number of input columns (ids excluded)")
            p.add_argument("--outputs", type=_nonneg, help="number of output columns")
        if journal:
            p.add_argument("--journal", help="results journal (default: <plan stem>.results.csv)")

    p = sub.add_parser("generate", help="generate a randomized plan from a spec file")
    p.add_argument("--spec", required=True, help="randomization spec (INI)")
    p.add_argument("--out", required=True, help="plan CSV to write")
    p.add_argument("--seed", type=_nonneg, help="override the spec file's seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="check a plan file")
    plan_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("status", help="show progress and the resume point")
    plan_args(p, participant=False)
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("recover", help="restore journaled results missing from the plan")
    plan_args(p, journal=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("serve", help="run a session for a stimulus engine")
    plan_args(p, participant=True, journal=True)
    p.add_argument("--start-from", type=_nonneg, help="trialNumber to start at (overrides resume)")
    p.add_argument("--transport", choices=("stdio", "socket"), default="stdio")
    p.add_argument("--port", type=_nonneg, default=0, help="loopback port for --transport socket")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", help="write one row per completed trial")
    plan_args(p, journal=True)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("inspect", help="print a plan's header columns")
    p.add_argument("--plan", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def exit_code_for(exc: TrialError) -> int:
    if isinstance(exc, LockError):
        return EXIT_LOCKED
    if isinstance(exc, StorageError):
        return EXIT_IO
    return EXIT_INVALID


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="exptrial: %(levelname)s: %(message)s",
        force=True,
    )
    try:
        return args.func(args)
    except TrialError as exc:
        print(f"exptrial: error: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report is not None:
            for f in report.findings:
                print(f"  {f.describe()}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"exptrial: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
