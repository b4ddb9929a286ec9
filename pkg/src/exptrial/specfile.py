"""Reader for randomization spec files (INI syntax).

    [plan]
    seed = 42
    method = latin_square        ; shuffle | blocked | latin_square
    repetitions = 2
    participants = 1-6, 9       ; ids and inclusive ranges
    outputs = response, rt

    [factor side]
    levels = left, right

    [factor duration]
    levels = 250, 500, "1,000"

Factor sections appear in column order. Lists are comma-separated; quote
an item with double quotes if it contains a comma.
"""

from __future__ import annotations

import configparser
import csv
import re
from pathlib import Path

from .errors import SpecError
from .generator import Factor, RandomizationSpec

_RANGE = re.compile(r"([0-9]+)\s*-\s*([0-9]+)", re.ASCII)
_FACTOR = re.compile(r"factor\s+(.+)")


def split_list(value: str) -> list[str]:
    value = value.strip()
    if not value:
        return []
    if "\n" in value:
        raise SpecError(f"list {value!r} must be on one line")
    try:
        (cells,) = csv.reader([value], skipinitialspace=True, strict=True)
    except csv.Error as exc:
        raise SpecError(f"cannot read list {value!r}: {exc}") from None
    return [cell.strip() for cell in cells]


def parse_participants(value: str) -> list[int]:
    ids: list[int] = []
    for item in split_list(value):
        m = _RANGE.fullmatch(item)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise SpecError(f"participant range {item!r} runs backwards")
            ids.extend(range(lo, hi + 1))
        elif item.isdigit():
            ids.append(int(item))
        else:
            raise SpecError(f"participant id {item!r} is not a non-negative integer")
    return ids


def _int(section, key: str, required: bool = True):
    raw = section.get(key)
    if raw is None:
        if required:
            raise SpecError(f"[plan] is missing {key!r}")
        return None
    try:
        return int(raw.strip(), 0)
    except ValueError:
        raise SpecError(f"[plan] {key} = {raw!r} is not an integer") from None


def parse_spec_text(text: str, seed: int | None = None) -> RandomizationSpec:
    """Parse spec text; ``seed`` (e.g. from the command line) overrides the file."""
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=(";",), strict=True
    )
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text)
    except configparser.DuplicateSectionError as exc:
        m = _FACTOR.fullmatch(exc.section.strip())
        what = f"factor name {m.group(1).strip()!r}" if m else f"section [{exc.section}]"
        raise SpecError(f"duplicate {what}", factor=m.group(1).strip() if m else None) from None
    except configparser.Error as exc:
        raise SpecError(f"cannot parse spec file: {exc}") from None

    if not cp.has_section("plan"):
        raise SpecError("spec file needs a [plan] section")
    plan = cp["plan"]
    unknown = set(plan) - {"seed", "method", "repetitions", "participants", "outputs"}
    if unknown:
        raise SpecError(f"[plan] has unknown key(s): {', '.join(sorted(unknown))}")
    file_seed = _int(plan, "seed", required=False)
    if seed is None:
        seed = file_seed
    if seed is None:
        raise SpecError("a seed is required (in [plan] or on the command line)")

    factors = []
    for name in cp.sections():
        if name == "plan":
            continue
        m = _FACTOR.fullmatch(name.strip())
        if not m:
            raise SpecError(f"unknown section [{name}]")
        section = cp[name]
        if set(section) != {"levels"}:
            raise SpecError(f"[{name}] must contain exactly one key, 'levels'")
        factors.append(Factor(m.group(1).strip(), tuple(split_list(section["levels"]))))

    repetitions = _int(plan, "repetitions", required=False)
    return RandomizationSpec(
        factors=factors,
        participants=parse_participants(plan.get("participants", "")),
        output_columns=split_list(plan.get("outputs", "")),
        seed=seed,
        method=plan.get("method", "shuffle").strip(),
        repetitions=1 if repetitions is None else repetitions,
    )


def read_spec_file(path, seed: int | None = None) -> RandomizationSpec:
    try:
        text = Path(path).read_bytes().decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise SpecError(f"{path} is not UTF-8 text: {exc}") from None
    return parse_spec_text(text, seed)
