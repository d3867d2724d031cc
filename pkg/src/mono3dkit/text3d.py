"""Locating, parsing, and rendering distance descriptors inside captions.

A distance descriptor is a span of caption text that carries a physical
length, e.g. "10 meters" or "1.8-meters-height".  All magnitudes are kept
as exact integer micrometer counts, so converting a descriptor between
units never loses precision: every supported unit is a decimal power of
the micrometer.

Spans are byte offsets into the UTF-8 encoding of the caption, which makes
splicing replacements into the surrounding text an exact byte operation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import NonRenderable, NonRepresentable


class LengthUnit(Enum):
    """Length units with exact micrometer-per-unit factors."""

    KILOMETER = ("kilometer", 10**9)
    METER = ("meter", 10**6)
    DECIMETER = ("decimeter", 10**5)
    CENTIMETER = ("centimeter", 10**4)
    MILLIMETER = ("millimeter", 10**3)

    def __init__(self, word: str, micrometers: int):
        self.word = word
        self.micrometers = micrometers

    def __repr__(self):
        return f"LengthUnit.{self.name}"


# Short codes are accepted on CLI flags and in configs, never in captions.
_UNIT_ALIASES = {}
for _u in LengthUnit:
    _UNIT_ALIASES[_u.word] = _u
    _UNIT_ALIASES[_u.word + "s"] = _u
_UNIT_ALIASES.update(
    {"km": LengthUnit.KILOMETER, "m": LengthUnit.METER, "dm": LengthUnit.DECIMETER,
     "cm": LengthUnit.CENTIMETER, "mm": LengthUnit.MILLIMETER}
)


def parse_unit(token: str) -> LengthUnit:
    """Resolve a unit word, plural, or short code ("m", "cm") to a LengthUnit."""
    try:
        return _UNIT_ALIASES[token.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown length unit: {token!r}") from None


class Form(Enum):
    """Surface form of a descriptor."""

    SPACED = "spaced"                      # "10 meters"
    HYPHEN_ATTRIBUTE = "hyphen-attribute"  # "1.8-meters-height"


ATTRIBUTES = frozenset({"depth", "height", "length", "width"})


@dataclass(frozen=True)
class DistanceDescriptor:
    """One parsed distance span.

    ``start``/``end`` are byte offsets into the caption's UTF-8 encoding;
    ``micrometers`` is the exact physical length.  Re-rendering
    ``(micrometers, unit, form, attribute)`` reproduces the canonical
    surface text.
    """

    start: int
    end: int
    value_text: str
    unit: LengthUnit
    micrometers: int
    form: Form
    attribute: Optional[str] = None

    def surface(self) -> str:
        """Canonical text of this descriptor."""
        return render(self.micrometers, self.unit, self.form, self.attribute)


@dataclass(frozen=True)
class Caption:
    """A caption with its parsed descriptors, ordered by span start."""

    id: str
    text: str
    descriptors: tuple[DistanceDescriptor, ...] = field(default_factory=tuple)

    @classmethod
    def parse(cls, id: str, text: str) -> "Caption":
        return cls(id=id, text=text, descriptors=tuple(scan_descriptors(text)))


# Grammar: a plain non-negative decimal numeral followed by a unit word,
# either spaced ("12.5 meters") or hyphenated with an attribute tag
# ("1.8-meters-height").  Unit and attribute words match case-insensitively;
# the numeral must not continue a longer number and the trailing word must
# not continue into more letters.
_UNIT_WORDS = rb"kilometers?|millimeters?|centimeters?|decimeters?|meters?"
_DESCRIPTOR_RE = re.compile(
    rb"(?<![0-9.])(?P<val>[0-9]+(?:\.[0-9]+)?)"
    rb"(?:"
    rb"-(?P<hunit>" + _UNIT_WORDS + rb")-(?P<attr>depth|height|length|width)(?![A-Za-z])"
    rb"| (?P<sunit>" + _UNIT_WORDS + rb")(?![A-Za-z])"
    rb")",
    re.IGNORECASE,
)

_DECIMAL_RE = re.compile(r"[0-9]+(?:\.[0-9]+)?")


def to_canonical(value_text: str, unit: LengthUnit) -> int:
    """Exact micrometer count of a decimal numeral expressed in ``unit``.

    Raises NonRepresentable if the value needs sub-micrometer precision
    (or is not a plain non-negative decimal).
    """
    if not _DECIMAL_RE.fullmatch(value_text):
        raise NonRepresentable(f"not a plain non-negative decimal: {value_text!r}")
    whole, _, frac = value_text.partition(".")
    scaled = int(whole + frac)       # value * 10**len(frac)
    scale = 10 ** len(frac)
    total = scaled * unit.micrometers
    if total % scale:
        raise NonRepresentable(
            f"{value_text} {unit.word} is not a whole number of micrometers"
        )
    return total // scale


def format_value(micrometers: int, unit: LengthUnit) -> str:
    """Decimal numeral for ``micrometers`` in ``unit``, at most 6 fractional digits.

    Trailing zeros are stripped; there is always a digit before the point
    and never a trailing point.
    """
    if micrometers < 0:
        raise ValueError("length must be non-negative")
    whole, rem = divmod(micrometers, unit.micrometers)
    if rem == 0:
        return str(whole)
    scaled = rem * 10**6
    if scaled % unit.micrometers:
        raise NonRenderable(
            f"{micrometers} um needs more than 6 fractional digits in {unit.word}"
        )
    frac = str(scaled // unit.micrometers).rjust(6, "0").rstrip("0")
    return f"{whole}.{frac}"


def render(
    micrometers: int,
    unit: LengthUnit,
    form: Form = Form.SPACED,
    attribute: Optional[str] = None,
) -> str:
    """Canonical descriptor text for a length in the given unit and form.

    The unit word is plural whenever the numeral is not exactly 1.
    """
    value = format_value(micrometers, unit)
    word = unit.word if micrometers == unit.micrometers else unit.word + "s"
    if form is Form.SPACED:
        return f"{value} {word}"
    if form is Form.HYPHEN_ATTRIBUTE:
        if attribute not in ATTRIBUTES:
            raise ValueError(f"hyphen form needs an attribute tag, got {attribute!r}")
        return f"{value}-{word}-{attribute}"
    raise ValueError(f"unknown form: {form!r}")


def scan_descriptors(text: str) -> list[DistanceDescriptor]:
    """All non-overlapping descriptor matches in ``text``, left to right.

    Numerals that would need sub-micrometer precision are skipped rather
    than reported as errors.  Spans are byte offsets into the UTF-8
    encoding of ``text``.
    """
    raw = text.encode("utf-8")
    found = []
    for m in _DESCRIPTOR_RE.finditer(raw):
        value_text = m.group("val").decode("ascii")
        unit_word = (m.group("hunit") or m.group("sunit")).decode("ascii").lower()
        unit = _UNIT_ALIASES[unit_word]
        attr = m.group("attr")
        try:
            micrometers = to_canonical(value_text, unit)
        except NonRepresentable:
            continue
        found.append(
            DistanceDescriptor(
                start=m.start(),
                end=m.end(),
                value_text=value_text,
                unit=unit,
                micrometers=micrometers,
                form=Form.HYPHEN_ATTRIBUTE if attr else Form.SPACED,
                attribute=attr.decode("ascii").lower() if attr else None,
            )
        )
    return found
