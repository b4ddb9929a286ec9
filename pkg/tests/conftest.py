import os
import subprocess
import sys
from pathlib import Path

import pytest

from exptrial.cli import main

TESTS = Path(__file__).parent


@pytest.fixture
def write_plan(tmp_path):
    """Write CSV text to ``tmp_path/plan.csv`` and return the path."""

    def _write(text: str, name: str = "plan.csv") -> Path:
        path = tmp_path / name
        path.write_bytes(text.encode("utf-8"))
        return path

    return _write


@pytest.fixture
def cli(capsys):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""

    def _run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    return _run


def run_exptrial(*argv, input=None, env=None, timeout=60):
    """Run the CLI as a subprocess."""
    full_env = dict(os.environ)
    full_env.pop("EXPTRIAL_CRASH_AT", None)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "exptrial", *map(str, argv)],
        input=input,
        capture_output=True,
        env=full_env,
        timeout=timeout,
    )


def ten_trial_plan(filled: int = 0, outputs: int = 1) -> str:
    header = "partiNumber,trialNumber,stim," + ",".join(f"o{i}" for i in range(outputs))
    lines = [header]
    for t in range(1, 11):
        outs = ",".join(f"r{t}" if t <= filled else "" for _ in range(outputs))
        lines.append(f"1,{t},s{t},{outs}")
    return "\n".join(lines) + "\n"


# -- acceptance summary -----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
