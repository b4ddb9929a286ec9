"""Independent reference checks and random-input builders for the tests.

Nothing here calls into the code paths it is used to check.
"""

from __future__ import annotations

import random
import string

from exptrial.plan import ColumnSchema, TrialPlan, TrialRecord

# characters that stress the CSV dialect
NASTY = [",", '"', "\n", "\r", "\r\n", " ", "\t", "é", "中", "😀", "\x00", "\ufeff", "''"]


def resume_oracle(plan: TrialPlan, participant: int):
    """Brute force: (position, trialNumber) of the first row with any blank
    output for the participant, or None if all are filled."""
    pos = 0
    for rec in plan.rows:
        if rec.participant != participant:
            continue
        filled = [v is not None and len(v.strip()) > 0 for v in rec.outputs]
        if not all(filled):
            return pos, rec.trial_number
        pos += 1
    return None


def header_cell_count(text: str) -> int:
    """Header width by splitting the first line on commas (unquoted headers only)."""
    return len(text.split("\n", 1)[0].split(","))


def is_latin(square) -> bool:
    n = len(square)
    want = list(range(n))
    rows_ok = all(sorted(row) == want for row in square)
    cols_ok = all(sorted(square[r][c] for r in range(n)) == want for c in range(n))
    return len(square) == n and all(len(r) == n for r in square) and rows_ok and cols_ok


def random_text(rng: random.Random, max_len: int = 8, nasty: bool = True) -> str:
    alphabet = string.ascii_letters + string.digits + " -_.:;"
    out = []
    for _ in range(rng.randint(0, max_len)):
        if nasty and rng.random() < 0.3:
            out.append(rng.choice(NASTY))
        else:
            out.append(rng.choice(alphabet))
    return "".join(out)


def random_filled(rng: random.Random, nasty: bool = True) -> str:
    """Random output value that counts as filled."""
    v = random_text(rng, 6, nasty)
    if not v.strip():
        v += rng.choice("xyz")
    return v


def random_plan(
    rng: random.Random,
    max_participants: int = 3,
    max_trials: int = 50,
    max_inputs: int = 4,
    max_outputs: int = 4,
    nasty: bool = True,
    fill: float = 0.5,
) -> TrialPlan:
    n_in = rng.randint(0, max_inputs)
    n_out = rng.randint(1, max_outputs)
    names = [f"in{i}" for i in range(n_in)] + [f"out{i}" for i in range(n_out)]
    if nasty and rng.random() < 0.3:
        names = [n + rng.choice([",x", ' "q"', "\nnl", "é"]) for n in names]
    schema = ColumnSchema(names[:n_in], names[n_in:])
    participants = rng.sample(range(0, 1000), rng.randint(1, max_participants))
    rows = []
    for p in participants:
        trial = rng.randint(0, 3)
        for _ in range(rng.randint(1, max_trials)):
            trial += rng.randint(1, 3)
            inputs = [random_text(rng, 8, nasty) for _ in range(n_in)]
            outputs = []
            for _ in range(n_out):
                outputs.append(random_filled(rng, nasty) if rng.random() < fill else None)
            rows.append(TrialRecord(p, trial, inputs, outputs))
    if rng.random() < 0.5:
        rng.shuffle(rows)
        # keep per-participant order increasing after interleaving
        by_p: dict[int, list[TrialRecord]] = {}
        for r in rows:
            by_p.setdefault(r.participant, []).append(r)
        for lst in by_p.values():
            lst.sort(key=lambda r: r.trial_number)
        it = {p: iter(v) for p, v in by_p.items()}
        rows = [next(it[r.participant]) for r in rows]
    return TrialPlan(schema, rows)
