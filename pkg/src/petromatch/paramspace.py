"""Bounded history-matching parameters bound to deck placeholders.

A ParameterSpace pairs an ordered list of ParameterSpec with a template
deck in which each spec's target token has been replaced by a {{NAME}}
placeholder. Substituting an assignment produces a concrete deck;
normalization to the unit cube is what the optimizer sees. Dry-run
validation substitutes the two bound corners (all-lower, all-upper) and
runs structural checks on the resulting decks, which is how bad bounds
are caught before any simulation is spent on them.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import deck as deckmod
from .deck import Deck, Keyword, Token
from .errors import (
    DeckError,
    DuplicateName,
    IncompleteAssignment,
    InvalidBounds,
    MalformedTable,
    OutOfBounds,
    SourceLocation,
    TargetNotFound,
    UnknownParameter,
)

SCALES = ("linear", "log10")

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

#: (section, keyword, occurrence, (record index, token index))
Target = tuple[str, str, int, tuple[int, int]]

#: name -> value; complete and in-bounds where an operation requires it
Assignment = Mapping[str, float]


def _shortest_decimal(value: float) -> str:
    v = float(value)
    if math.isfinite(v) and v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    lower: float
    upper: float
    initial: float
    target: Target
    scale: str = "linear"
    unit: str = ""

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise InvalidBounds(f"parameter name {self.name!r} is not an identifier")
        if not (self.lower < self.upper):
            raise InvalidBounds(
                f"{self.name}: need lower < upper, got [{self.lower:g}, {self.upper:g}]"
            )
        if not (self.lower <= self.initial <= self.upper):
            raise InvalidBounds(
                f"{self.name}: initial {self.initial:g} outside "
                f"[{self.lower:g}, {self.upper:g}]"
            )
        if self.scale not in SCALES:
            raise InvalidBounds(f"{self.name}: unknown scale {self.scale!r}")
        if self.scale == "log10" and self.lower <= 0:
            raise InvalidBounds(
                f"{self.name}: log10 scale needs lower > 0, got {self.lower:g}"
            )
        section, keyword, occurrence, path = self.target
        object.__setattr__(
            self, "target", (str(section), str(keyword), int(occurrence),
                             (int(path[0]), int(path[1])))
        )

    def to_unit(self, value: float) -> float:
        if not (self.lower <= value <= self.upper):
            raise OutOfBounds(
                f"{self.name}: {value:g} outside [{self.lower:g}, {self.upper:g}]"
            )
        if value == self.lower:
            return 0.0
        if value == self.upper:
            return 1.0
        if self.scale == "log10":
            lo, hi = math.log10(self.lower), math.log10(self.upper)
            return (math.log10(value) - lo) / (hi - lo)
        return (value - self.lower) / (self.upper - self.lower)

    def from_unit(self, u: float) -> float:
        if not (0.0 <= u <= 1.0):
            raise OutOfBounds(f"{self.name}: unit coordinate {u:g} outside [0, 1]")
        if u == 0.0:
            return self.lower
        if u == 1.0:
            return self.upper
        if self.scale == "log10":
            lo, hi = math.log10(self.lower), math.log10(self.upper)
            value = 10.0 ** (lo + u * (hi - lo))
        else:
            value = self.lower + u * (self.upper - self.lower)
        # rounding through the transform must not escape the box
        return min(max(value, self.lower), self.upper)


@dataclass(frozen=True)
class ParameterSpace:
    """Specs plus the template deck carrying one placeholder per spec."""

    template: Deck
    specs: tuple[ParameterSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        found = deckmod.find_placeholders(self.template)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise DuplicateName("duplicate parameter names in space")
        if set(found) != set(names):
            missing = set(names) - set(found)
            extra = set(found) - set(names)
            raise TargetNotFound(
                f"placeholder/spec mismatch: specs without placeholder {sorted(missing)}, "
                f"placeholders without spec {sorted(extra)}"
            )
        for spec in self.specs:
            if found[spec.name] != spec.target:
                raise TargetNotFound(
                    f"{spec.name}: placeholder sits at {found[spec.name]}, "
                    f"spec records {spec.target}"
                )

    def dimension(self) -> int:
        return len(self.specs)

    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def spec(self, name: str) -> ParameterSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise UnknownParameter(f"no parameter named {name!r}")


def empty_space(deck: Deck) -> ParameterSpace:
    """A space over a deck that has no placeholders yet."""
    return ParameterSpace(template=deck, specs=())


def add_parameter(space: ParameterSpace, spec: ParameterSpec) -> ParameterSpace:
    """Bind a new spec: the target token becomes {{NAME}} in the template."""
    if any(s.name == spec.name for s in space.specs):
        raise DuplicateName(f"parameter {spec.name!r} already defined")
    section, keyword, occurrence, path = spec.target
    try:
        tok = deckmod.get_token(space.template, section, keyword, occurrence, path)
    except DeckError as exc:
        raise TargetNotFound(f"{spec.name}: {exc}") from None
    inner = tok.value if tok.kind == "repeat" else tok
    if inner.kind == "placeholder":
        raise TargetNotFound(
            f"{spec.name}: target token is already parameterized"
        )
    if inner.kind != "number":
        raise TargetNotFound(
            f"{spec.name}: target token is {inner.kind}, expected a number"
        )
    template = deckmod.replace_token(
        space.template, section, keyword, occurrence, path,
        deckmod.placeholder(spec.name),
    )
    return ParameterSpace(template=template, specs=space.specs + (spec,))


def with_bounds(space: ParameterSpace, name: str,
                lower: float, upper: float) -> ParameterSpace:
    """Same space with one spec's bounds replaced (template untouched).

    The spec's own validation applies, so the initial value must still fall
    inside the new box.
    """
    spec = space.spec(name)
    new = dataclasses.replace(spec, lower=float(lower), upper=float(upper))
    specs = tuple(new if s.name == name else s for s in space.specs)
    return ParameterSpace(template=space.template, specs=specs)


def remove_parameter(space: ParameterSpace, name: str) -> ParameterSpace:
    """Unbind a spec: its placeholder reverts to the spec's initial value."""
    spec = space.spec(name)
    section, keyword, occurrence, path = spec.target
    template = deckmod.replace_token(
        space.template, section, keyword, occurrence, path,
        deckmod.number(float(spec.initial), text=_shortest_decimal(spec.initial)),
    )
    specs = tuple(s for s in space.specs if s.name != name)
    return ParameterSpace(template=template, specs=specs)


def _check_assignment(space: ParameterSpace, assignment: Assignment) -> None:
    missing = [s.name for s in space.specs if s.name not in assignment]
    if missing:
        raise IncompleteAssignment(f"assignment missing {missing}")
    extra = sorted(set(assignment) - {s.name for s in space.specs})
    if extra:
        raise UnknownParameter(f"assignment names unknown parameters {extra}")
    for s in space.specs:
        v = float(assignment[s.name])
        if not (s.lower <= v <= s.upper):
            raise OutOfBounds(
                f"{s.name}: {v:g} outside [{s.lower:g}, {s.upper:g}]"
            )


def substitute(space: ParameterSpace, assignment: Assignment) -> Deck:
    """Concrete deck for an in-bounds assignment; no placeholders remain."""
    _check_assignment(space, assignment)
    deck = space.template
    for spec in space.specs:
        v = float(assignment[spec.name])
        section, keyword, occurrence, path = spec.target
        deck = deckmod.replace_token(
            deck, section, keyword, occurrence, path,
            deckmod.number(v, text=_shortest_decimal(v)),
        )
    return deck


def initial_assignment(space: ParameterSpace) -> dict[str, float]:
    return {s.name: float(s.initial) for s in space.specs}


def to_unit_cube(space: ParameterSpace, assignment: Assignment) -> np.ndarray:
    _check_assignment(space, assignment)
    return np.array([s.to_unit(float(assignment[s.name])) for s in space.specs])


def from_unit_cube(space: ParameterSpace, point) -> dict[str, float]:
    u = np.asarray(point, dtype=float).ravel()
    if u.size != len(space.specs):
        raise IncompleteAssignment(
            f"point has {u.size} coordinates, space has {len(space.specs)}"
        )
    return {s.name: s.from_unit(float(ui)) for s, ui in zip(space.specs, u)}


# --- dry-run validation ------------------------------------------------------


@dataclass(frozen=True)
class ValidationOutcome:
    ok: bool
    rule: str
    message: str = ""
    location: SourceLocation | None = None

    @classmethod
    def passed(cls, rule: str) -> "ValidationOutcome":
        return cls(True, rule)

    @classmethod
    def failed(cls, rule: str, message: str,
               location: SourceLocation | None = None) -> "ValidationOutcome":
        return cls(False, rule, message, location)


@dataclass(frozen=True)
class ValidationEntry:
    corner: str  # "lower" | "upper"
    outcome: ValidationOutcome


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[ValidationEntry, ...]

    @property
    def ok(self) -> bool:
        return all(e.outcome.ok for e in self.entries)

    def failures(self) -> list[ValidationEntry]:
        return [e for e in self.entries if not e.outcome.ok]


DeckValidator = Callable[[Deck], ValidationOutcome]


def dry_run_validate(space: ParameterSpace,
                     validators: tuple[DeckValidator, ...]) -> ValidationReport:
    """Substitute the all-lower and all-upper corners and run each validator
    on both decks. Failures are report entries, never exceptions."""
    corners = (
        ("lower", {s.name: s.lower for s in space.specs}),
        ("upper", {s.name: s.upper for s in space.specs}),
    )
    entries: list[ValidationEntry] = []
    for label, assignment in corners:
        candidate = substitute(space, assignment)
        for validator in validators:
            entries.append(ValidationEntry(label, validator(candidate)))
    return ValidationReport(tuple(entries))


# --- relative permeability tables -------------------------------------------

RELPERM_KEYWORDS = ("SWOF", "SGOF")


def _table_rows(keyword: Keyword) -> list[list[list[float | None]]]:
    """Recover row structure from source line numbers: one table per record,
    one row per source line. Defaults map to None (unknown, unchecked)."""
    tables = []
    for rec in keyword.records:
        if not rec.items:
            continue
        rows: list[list[float | None]] = []
        current_line = None
        for tok in rec.items:
            scalars: list[float | None] = []
            inner = tok.value if tok.kind == "repeat" else tok
            n = tok.count if tok.kind in ("repeat", "default") else 1
            if tok.kind == "default":
                scalars = [None] * n
            elif isinstance(inner, Token) and inner.kind == "number":
                scalars = [float(inner.value)] * n
            else:
                raise MalformedTable(
                    f"{keyword.name}: non-numeric table entry {tok.render()!r}"
                )
            if not rows or (tok.line is not None and tok.line != current_line):
                rows.append([])
            current_line = tok.line if tok.line is not None else current_line
            rows[-1].extend(scalars)
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise MalformedTable(
                f"{keyword.name}: ragged table rows (widths {sorted(widths)})"
            )
        if widths and min(widths) < 3:
            raise MalformedTable(
                f"{keyword.name}: table rows need at least 3 columns"
            )
        tables.append(rows)
    return tables


def validate_relperm_table(keyword: Keyword) -> ValidationOutcome:
    """Saturation strictly increasing, wetting-phase kr non-decreasing,
    opposite-phase kr non-increasing, kr within [0, 1]."""
    rule = "RelpermMonotonicity"
    loc = keyword.origin
    for rows in _table_rows(keyword):
        sats = [r[0] for r in rows]
        kr_up = [r[1] for r in rows]
        kr_down = [r[2] for r in rows]
        if any(v is None for v in sats):
            raise MalformedTable(f"{keyword.name}: saturation column has defaults")
        for i in range(1, len(sats)):
            if sats[i] <= sats[i - 1]:
                return ValidationOutcome.failed(
                    rule,
                    f"non-monotonic relative permeability curve: {keyword.name} "
                    f"saturation not increasing at row {i + 1} "
                    f"({sats[i - 1]:g} -> {sats[i]:g})",
                    loc,
                )
        for col, vals, direction in (("2", kr_up, "non-decreasing"),
                                     ("3", kr_down, "non-increasing")):
            known = [(i, v) for i, v in enumerate(vals) if v is not None]
            for v_i, v in known:
                if not (0.0 <= v <= 1.0):
                    return ValidationOutcome.failed(
                        rule,
                        f"relative permeability outside [0, 1]: {keyword.name} "
                        f"column {col} row {v_i + 1} = {v:g}",
                        loc,
                    )
            for (i_prev, prev), (i_cur, cur) in zip(known, known[1:]):
                bad = cur < prev if direction == "non-decreasing" else cur > prev
                if bad:
                    return ValidationOutcome.failed(
                        rule,
                        f"non-monotonic relative permeability curve: {keyword.name} "
                        f"column {col} must be {direction}, row {i_cur + 1} "
                        f"goes {prev:g} -> {cur:g}",
                        loc,
                    )
    return ValidationOutcome.passed(rule)


def relperm_validator(deck: Deck) -> ValidationOutcome:
    """Deck-level check over every SWOF/SGOF keyword."""
    for sec in deck.sections:
        for kw in sec.keywords:
            if kw.name in RELPERM_KEYWORDS:
                outcome = validate_relperm_table(kw)
                if not outcome.ok:
                    return outcome
    return ValidationOutcome.passed("RelpermMonotonicity")


_ARITH_RE = re.compile(r"^[0-9][0-9.eE]*[+\-*/][0-9.eE+\-*/]*[0-9.]$")

#: sections whose records are pure data; bare words there are suspicious
_DATA_SECTIONS = ("GRID", "EDIT", "PROPS", "REGIONS", "SOLUTION")


def arithmetic_validator(deck: Deck) -> ValidationOutcome:
    """Flag leftover arithmetic expressions (e.g. "0.2+0.05") inside data
    arrays, which simulators reject when the keyword expects literals."""
    rule = "ArithmeticNotSupported"
    for sec in deck.sections:
        if sec.name not in _DATA_SECTIONS:
            continue
        for kw in sec.keywords:
            for rec in kw.records:
                for tok in rec.items:
                    inner = tok.value if tok.kind == "repeat" else tok
                    if (isinstance(inner, Token) and inner.kind == "word"
                            and _ARITH_RE.match(str(inner.value))):
                        return ValidationOutcome.failed(
                            rule,
                            f"arithmetic expression {inner.value!r} inside "
                            f"{kw.name}, which accepts only literal values",
                            kw.origin,
                        )
    return ValidationOutcome.passed(rule)


DEFAULT_VALIDATORS: tuple[DeckValidator, ...] = (
    relperm_validator,
    arithmetic_validator,
)


# --- default bound heuristics -------------------------------------------------
#
# The paper-shaped conventions the rule-based Parameterizer applies when no
# engineer has supplied ranges. All overridable by editing the specs at the
# checkpoint.


def perm_value_bounds(nominal: float) -> tuple[float, float, str]:
    """Permeability values range a fifth to twice nominal, log-scaled."""
    if nominal <= 0:
        raise InvalidBounds(f"permeability must be positive, got {nominal:g}")
    return nominal / 5.0, nominal * 2.0, "log10"


def poro_value_bounds(nominal: float) -> tuple[float, float, str]:
    """Porosity values vary 0.8x to 1.2x nominal, clamped to (0, 1]."""
    if not (0 < nominal <= 1):
        raise InvalidBounds(f"porosity must lie in (0, 1], got {nominal:g}")
    return 0.8 * nominal, min(1.2 * nominal, 1.0), "linear"


def multiplier_bounds() -> tuple[float, float, str]:
    """Generic property multipliers (MULTX, MULTPV, ...)."""
    return 0.1, 10.0, "log10"


def fault_multiplier_bounds() -> tuple[float, float, str]:
    """Fault transmissibility multipliers span sealing to enhancing."""
    return 1e-3, 10.0, "log10"


def kr_endpoint_bounds(value: float, window: float = 0.15) -> tuple[float, float, str]:
    """Relative permeability endpoints move inside a window clamped to [0, 1]."""
    lower = max(0.0, value - window)
    upper = min(1.0, value + window)
    if lower == upper:
        lower = max(0.0, upper - window)
    return lower, upper, "linear"


def saturation_endpoint_bounds(value: float, neighbor: float) -> tuple[float, float, str]:
    """Saturation endpoints stay on their side of the adjacent table row."""
    half = 0.5 * abs(neighbor - value)
    if half == 0.0:
        raise InvalidBounds(f"saturation endpoint {value:g} equals its neighbor")
    if neighbor > value:
        return max(0.0, value - half), value + half, "linear"
    return value - half, min(1.0, value + half), "linear"


# --- manifest ------------------------------------------------------------------


def manifest_json(space: ParameterSpace) -> str:
    """Serializable spec list (the deck template travels separately)."""
    params = []
    for s in space.specs:
        section, keyword, occurrence, path = s.target
        params.append({
            "name": s.name,
            "lower": s.lower,
            "upper": s.upper,
            "initial": s.initial,
            "scale": s.scale,
            "unit": s.unit,
            "target": {
                "section": section,
                "keyword": keyword,
                "occurrence": occurrence,
                "token": list(path),
            },
        })
    return json.dumps({"parameters": params}, indent=2) + "\n"


def specs_from_manifest(text: str) -> tuple[ParameterSpec, ...]:
    doc = json.loads(text)
    specs = []
    for p in doc["parameters"]:
        t = p["target"]
        specs.append(ParameterSpec(
            name=p["name"],
            lower=float(p["lower"]),
            upper=float(p["upper"]),
            initial=float(p["initial"]),
            target=(t["section"], t["keyword"], int(t["occurrence"]),
                    tuple(int(i) for i in t["token"])),
            scale=p.get("scale", "linear"),
            unit=p.get("unit", ""),
        ))
    return tuple(specs)


def space_from_manifest(deck: Deck, text: str) -> ParameterSpace:
    """Rebuild a space: a deck that already carries the placeholders binds
    directly; a concrete deck is parameterized spec by spec."""
    specs = specs_from_manifest(text)
    if deckmod.find_placeholders(deck):
        return ParameterSpace(template=deck, specs=specs)
    space = empty_space(deck)
    for spec in specs:
        space = add_parameter(space, spec)
    return space
