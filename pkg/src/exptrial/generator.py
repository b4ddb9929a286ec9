"""Seeded, counterbalanced trial-plan generation.

All randomness comes from SplitMix64 so that any reimplementation can
reproduce a plan bit-for-bit from its seed:

    state <- (state + 0x9E3779B97F4A7C15) mod 2**64
    z <- state
    z <- ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
    z <- ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2**64
    return z ^ (z >> 31)

A generator for ``(seed, stream_id)`` starts from
``state = seed ^ mix64(stream_id ^ 0xD1B54A32D192ED03)`` where ``mix64`` is
the output function above applied to its argument (no increment).
Bounded draws in ``[0, n)`` reject raw values ``>= 2**64 - (2**64 mod n)``
and return ``x mod n``. Shuffles are Fisher-Yates from the top:
for i = len-1 down to 1, swap item i with item ``below(i + 1)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

from .errors import SpecError
from .plan import ID_COLUMNS, ColumnSchema, TrialPlan, TrialRecord

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
STREAM_SALT = 0xD1B54A32D192ED03
# stream reserved for the Latin square; participant streams use their ids
LATIN_STREAM = MASK64

METHODS = ("shuffle", "blocked", "latin_square")


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int, stream_id: int = 0):
        self.state = (seed ^ mix64((stream_id ^ STREAM_SALT) & MASK64)) & MASK64

    def next64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def seeded_shuffle(items: Sequence, seed: int, stream_id: int = 0) -> list:
    out = list(items)
    SplitMix64(seed, stream_id).shuffle(out)
    return out


def factorial_expand(factors: Sequence["Factor"], repetitions: int = 1) -> list[tuple]:
    """Cartesian product of factor levels, first factor slowest, repeated."""
    if not factors:
        raise SpecError("at least one factor is required")
    one = list(itertools.product(*(f.levels for f in factors)))
    return one * repetitions


def latin_square(order: int, seed: int) -> list[list[int]]:
    """Cyclic Latin square with rows and symbols permuted by the seed."""
    if order < 1:
        raise ValueError("order must be >= 1")
    rng = SplitMix64(seed, LATIN_STREAM)
    row_perm = list(range(order))
    rng.shuffle(row_perm)
    symbols = list(range(order))
    rng.shuffle(symbols)
    return [[symbols[(row_perm[r] + c) % order] for c in range(order)] for r in range(order)]


@dataclass(frozen=True)
class Factor:
    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))


@dataclass(frozen=True)
class RandomizationSpec:
    factors: tuple[Factor, ...]
    participants: tuple[int, ...]
    output_columns: tuple[str, ...]
    seed: int
    method: str = "shuffle"
    repetitions: int = 1

    def __post_init__(self):
        for name in ("factors", "participants", "output_columns"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def condition_count(self) -> int:
        n = 1
        for f in self.factors:
            n *= len(f.levels)
        return n


def check_spec(spec: RandomizationSpec) -> None:
    """Raise SpecError naming the first violated rule."""
    if not spec.factors:
        raise SpecError("at least one factor is required")
    names: set[str] = set()
    for f in spec.factors:
        if not f.name:
            raise SpecError("factor name must not be empty")
        if f.name in ID_COLUMNS:
            raise SpecError(f"factor name {f.name!r} is reserved for the id columns")
        if f.name in names:
            raise SpecError(f"duplicate factor name {f.name!r}", factor=f.name)
        names.add(f.name)
        if not f.levels:
            raise SpecError(f"factor {f.name!r} has no levels", factor=f.name)
        if len(set(f.levels)) != len(f.levels):
            raise SpecError(f"factor {f.name!r} repeats a level", factor=f.name)
        if not all(isinstance(v, str) for v in f.levels):
            raise SpecError(f"factor {f.name!r}: levels must be text", factor=f.name)
    if not spec.output_columns:
        raise SpecError("at least one output column is required")
    outs: set[str] = set()
    for name in spec.output_columns:
        if not name:
            raise SpecError("output column name must not be empty")
        if name in names or name in ID_COLUMNS:
            raise SpecError(f"output column {name!r} clashes with another column")
        if name in outs:
            raise SpecError(f"duplicate output column {name!r}")
        outs.add(name)
    if spec.method not in METHODS:
        raise SpecError(f"method must be one of {', '.join(METHODS)}, got {spec.method!r}")
    if not isinstance(spec.repetitions, int) or spec.repetitions < 1:
        raise SpecError("repetitions must be a positive integer")
    if not spec.participants:
        raise SpecError("at least one participant is required")
    if len(set(spec.participants)) != len(spec.participants):
        raise SpecError("participant ids must be unique")
    for p in spec.participants:
        if not isinstance(p, int) or not 0 <= p < LATIN_STREAM:
            raise SpecError(f"participant id {p!r} must be a non-negative integer")
    if not isinstance(spec.seed, int) or not 0 <= spec.seed <= MASK64:
        raise SpecError("seed must be an unsigned 64-bit integer")


def participant_order(spec: RandomizationSpec, k: int, participant: int) -> list[tuple]:
    """Condition tuples in presentation order for the k-th participant."""
    conditions = factorial_expand(spec.factors, 1)
    if spec.method == "shuffle":
        return seeded_shuffle(conditions * spec.repetitions, spec.seed, participant)
    if spec.method == "blocked":
        rng = SplitMix64(spec.seed, participant)
        order: list[tuple] = []
        for _ in range(spec.repetitions):
            block = list(conditions)
            rng.shuffle(block)
            order.extend(block)
        return order
    square = latin_square(len(conditions), spec.seed)
    row = square[k % len(conditions)]
    return [conditions[i] for i in row] * spec.repetitions


def generate_plan(spec: RandomizationSpec) -> TrialPlan:
    check_spec(spec)
    schema = ColumnSchema(
        input_columns=[f.name for f in spec.factors],
        output_columns=spec.output_columns,
    )
    empty = (None,) * len(spec.output_columns)
    rows = []
    for k, participant in enumerate(spec.participants):
        for t, cond in enumerate(participant_order(spec, k, participant), start=1):
            rows.append(TrialRecord(participant, t, cond, empty))
    return TrialPlan(schema, rows)
