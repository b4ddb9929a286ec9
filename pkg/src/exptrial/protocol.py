"""Line-oriented sidecar protocol.

One JSON object per line, UTF-8, LF-terminated, at most 1 MiB per line.
The stimulus engine sends a request and the manager answers with exactly
one reply; the manager never speaks first. A request's optional ``tag`` is
copied verbatim into its reply.

Engine -> manager: HELLO, GET_TRIAL, PUT_RESULT, SKIP, STATUS, BYE.
Manager -> engine: WELCOME, TRIAL, FINISHED, OK, STATUS_REPORT, ERROR.
See docs/protocol.md for the full catalogue and example transcripts.
"""

from __future__ import annotations

import json
import logging
import socket
from typing import BinaryIO, Optional

from .errors import PlanError, ProtocolError, SessionError, StorageError, TrialError
from .session import Session, SessionConfig, begin_session

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "1.0"
MAX_LINE = 1 << 20  # bytes, excluding the LF

_TEXT = str
_INT = int
_OPT_INT = (int, type(None))

# type -> ordered (field, accepted python types); "map" = object of text values
MESSAGES: dict[str, tuple[tuple[str, object], ...]] = {
    "HELLO": (("protocol_version", _TEXT),),
    "GET_TRIAL": (),
    "PUT_RESULT": (("outputs", "map"),),
    "SKIP": (("reason", _TEXT),),
    "STATUS": (),
    "BYE": (),
    "WELCOME": (
        ("participant", _INT),
        ("total", _INT),
        ("completed", _INT),
        ("resumed_at_trial", _OPT_INT),
    ),
    "TRIAL": (("trial_number", _INT), ("inputs", "map")),
    "FINISHED": (),
    "OK": (),
    "STATUS_REPORT": (
        ("total", _INT),
        ("completed", _INT),
        ("remaining", _INT),
        ("current", _OPT_INT),
    ),
    "ERROR": (("code", _TEXT), ("message", _TEXT)),
}
NO_TAG = object()
REQUESTS = ("HELLO", "GET_TRIAL", "PUT_RESULT", "SKIP", "STATUS", "BYE")


def _check_field(kind: str, name: str, value, expected) -> None:
    if expected == "map":
        ok = isinstance(value, dict) and all(isinstance(v, str) for v in value.values())
    elif expected is _INT or expected == _OPT_INT:
        ok = isinstance(value, expected) and not isinstance(value, bool)
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ProtocolError(f"{kind}: field {name!r} has the wrong type")


def make(kind: str, tag=NO_TAG, **fields) -> dict:
    """Build a message dict with fields in catalogue order."""
    msg = {"type": kind}
    for name, _ in MESSAGES[kind]:
        msg[name] = fields[name]
    if tag is not NO_TAG:
        msg["tag"] = tag
    return msg


def encode(message: dict) -> bytes:
    kind = message.get("type")
    if kind not in MESSAGES:
        raise ProtocolError(f"unknown message type {kind!r}")
    for name, expected in MESSAGES[kind]:
        if name not in message:
            raise ProtocolError(f"{kind}: missing field {name!r}")
        _check_field(kind, name, message[name], expected)
    line = json.dumps(message, ensure_ascii=False, separators=(",", ":"))
    data = line.encode("utf-8") + b"\n"
    if len(data) - 1 > MAX_LINE:
        raise ProtocolError("encoded message exceeds 1 MiB", code="LINE_TOO_LONG")
    return data


def _parse_object(line: bytes) -> dict:
    if line.endswith(b"\n"):
        line = line[:-1]
    if line.endswith(b"\r"):
        line = line[:-1]
    if len(line) > MAX_LINE:
        raise ProtocolError("line exceeds 1 MiB", code="LINE_TOO_LONG")
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"not a JSON object: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    return obj


def _validate(obj: dict) -> dict:
    kind = obj.get("type")
    if not isinstance(kind, str):
        raise ProtocolError("message has no 'type'")
    if kind not in MESSAGES:
        raise ProtocolError(f"unknown message type {kind!r}")
    msg = {"type": kind}
    for name, expected in MESSAGES[kind]:
        if name not in obj:
            raise ProtocolError(f"{kind}: missing field {name!r}")
        _check_field(kind, name, obj[name], expected)
        msg[name] = obj[name]
    if "tag" in obj:
        msg["tag"] = obj["tag"]
    return msg


def decode(line: bytes) -> dict:
    """Parse one line into a message dict; unknown extra fields are dropped."""
    return _validate(_parse_object(line))


# -- transports -------------------------------------------------------------


def read_line(stream: BinaryIO) -> Optional[bytes]:
    """Next line from ``stream`` (None at EOF). Over-long lines are drained
    and returned truncated so the caller can report LINE_TOO_LONG."""
    line = stream.readline(MAX_LINE + 1)
    if not line:
        return None
    if len(line) == MAX_LINE + 1 and not line.endswith(b"\n"):
        while True:
            more = stream.readline(1 << 16)
            if not more or more.endswith(b"\n"):
                break
    return line


class Server:
    """Message loop for one session. Call :meth:`handle` per request line."""

    def __init__(self, session: Session):
        self.session = session
        self.greeted = False
        self.done = False
        self.exit_status = 0

    def handle(self, line: bytes) -> bytes:
        tag = NO_TAG
        try:
            obj = _parse_object(line)
            tag = obj.get("tag", NO_TAG)
            msg = _validate(obj)
            return encode(self._dispatch(msg, tag))
        except ProtocolError as exc:
            if exc.code == "UNSUPPORTED_VERSION":
                self.done = True
                self.exit_status = 2
            return encode(self._error(exc.code, exc.message, tag))

    def _error(self, code: str, message: str, tag) -> dict:
        return make("ERROR", tag, code=code, message=message)

    def _dispatch(self, msg: dict, tag) -> dict:
        kind = msg["type"]
        if kind not in REQUESTS:
            raise ProtocolError(f"{kind} is a manager message, not a request")
        s = self.session
        if kind == "HELLO":
            major = msg["protocol_version"].split(".")[0]
            if major != PROTOCOL_VERSION.split(".")[0]:
                raise ProtocolError(
                    f"manager speaks protocol {PROTOCOL_VERSION}, "
                    f"engine asked for {msg['protocol_version']}",
                    code="UNSUPPORTED_VERSION",
                )
            self.greeted = True
            st = s.status()
            return make(
                "WELCOME", tag,
                participant=s.participant,
                total=st.total,
                completed=st.completed,
                resumed_at_trial=s.resumed_at,
            )
        if not self.greeted:
            return self._error("NOT_READY", "send HELLO first", tag)
        if kind == "BYE":
            self.done = True
            return make("OK", tag)
        if kind == "STATUS":
            st = s.status()
            return make(
                "STATUS_REPORT", tag,
                total=st.total, completed=st.completed,
                remaining=st.remaining, current=st.current,
            )
        if kind == "GET_TRIAL":
            trial = s.current_trial()
            if trial is None:
                return make("FINISHED", tag)
            return make("TRIAL", tag, trial_number=trial.trial_number, inputs=dict(trial.inputs))
        try:
            if kind == "PUT_RESULT":
                s.record_result(self._ordered_outputs(msg["outputs"]))
            else:
                s.skip_trial(msg["reason"])
        except StorageError as exc:
            self.done = True
            self.exit_status = 3
            return self._error("STORAGE_FAILURE", exc.message, tag)
        except (PlanError, SessionError) as exc:
            return self._error(exc.code, exc.message, tag)
        except TrialError as exc:
            self.done = True
            self.exit_status = 3
            return self._error(exc.code, exc.message, tag)
        return make("OK", tag)

    def _ordered_outputs(self, outputs: dict) -> list[str]:
        names = self.session.plan.schema.output_columns
        missing = [n for n in names if n not in outputs]
        extra = [n for n in outputs if n not in names]
        if missing or extra:
            detail = []
            if missing:
                detail.append(f"missing {missing}")
            if extra:
                detail.append(f"unknown {extra}")
            raise SessionError(
                "outputs do not match the plan's output columns: " + ", ".join(detail),
                code="OUTPUT_ARITY_MISMATCH",
            )
        return [outputs[n] for n in names]

    def run(self, rstream: BinaryIO, wstream: BinaryIO) -> int:
        """Serve requests until BYE, EOF or a fatal error; returns exit status."""
        clean = False
        try:
            while not self.done:
                line = read_line(rstream)
                if line is None:
                    log.warning("engine closed the stream without BYE")
                    break
                wstream.write(self.handle(line))
                wstream.flush()
            clean = self.done and self.exit_status == 0
        finally:
            if clean:
                self.session.close()
            else:
                # no orderly end: the session stays resumable as if it crashed
                self.session.abandon()
        return self.exit_status


def serve(config: SessionConfig, rstream: BinaryIO, wstream: BinaryIO) -> int:
    session = begin_session(config)
    return Server(session).run(rstream, wstream)


def serve_socket(config: SessionConfig, port: int, ready=None) -> int:
    """Serve one session over a single loopback TCP connection.

    The listening socket is closed once a client connects, so further
    connection attempts are refused. ``ready`` is called with the bound
    port before accepting.
    """
    session = begin_session(config)
    try:
        with socket.create_server(("127.0.0.1", port)) as listener:
            if ready is not None:
                ready(listener.getsockname()[1])
            conn, _ = listener.accept()
    except BaseException:
        session.abandon()
        raise
    with conn, conn.makefile("rb") as r, conn.makefile("wb") as w:
        return Server(session).run(r, w)

