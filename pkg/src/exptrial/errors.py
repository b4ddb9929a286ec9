"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` (e.g. ``RAGGED_ROW``)
so the CLI and the sidecar protocol can report it without string matching.
"""

from __future__ import annotations


class TrialError(Exception):
    """Base class for all errors raised by exptrial."""

    code = "ERROR"

    def __init__(self, message: str, code: str | None = None, **detail):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.message = message
        self.detail = detail

    def __getattr__(self, name):
        # row/line/holder etc. live in ``detail``
        try:
            return self.__dict__["detail"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class CsvError(TrialError):
    """The byte stream is not a well-formed plan CSV."""

    code = "MALFORMED_CSV"


class PlanError(TrialError):
    """A plan operation was given arguments that violate its contract."""

    code = "PLAN_ERROR"


class PlanInvalid(PlanError):
    """A plan failed validation; ``report`` holds the findings."""

    code = "PLAN_INVALID"

    def __init__(self, report, message: str | None = None):
        errors = report.errors
        if message is None:
            first = errors[0].describe() if errors else "no findings"
            message = f"plan has {len(errors)} error(s); first: {first}"
        super().__init__(message)
        self.report = report


class SpecError(TrialError):
    """A randomization spec is invalid."""

    code = "SPEC_INVALID"


class SessionError(TrialError):
    code = "SESSION_ERROR"


class StorageError(TrialError):
    """A journal append, plan rewrite or lock operation failed at the OS level."""

    code = "STORAGE_FAILURE"


class JournalError(TrialError):
    code = "MALFORMED_JOURNAL"


class LockError(TrialError):
    """Another live process owns the session lock."""

    code = "ALREADY_LOCKED"


class ProtocolError(TrialError):
    code = "PROTOCOL_ERROR"
