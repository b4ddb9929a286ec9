"""Crash points for fault-injection tests.

Set ``EXPTRIAL_CRASH_AT=<point>`` or ``<point>@<n>`` and the process sends
itself SIGKILL the n-th time (default first) it reaches ``<point>``.
Points: before_journal_append, after_journal_append, mid_rewrite,
after_rewrite. Unset in normal use; the check is a dict lookup.
"""

from __future__ import annotations

import os
import signal

ENV = "EXPTRIAL_CRASH_AT"
POINTS = ("before_journal_append", "after_journal_append", "mid_rewrite", "after_rewrite")

_hits: dict[str, int] = {}


def _target() -> tuple[str, int] | None:
    raw = os.environ.get(ENV)
    if not raw:
        return None
    name, _, count = raw.partition("@")
    return name, int(count or 1)


def checkpoint(name: str) -> None:
    target = _target()
    if target is None or target[0] != name:
        return
    _hits[name] = _hits.get(name, 0) + 1
    if _hits[name] == target[1]:
        os.kill(os.getpid(), signal.SIGKILL)
