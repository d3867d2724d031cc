"""Equidistant unit remapping of distance descriptors in captions.

Three policies are supported:

* plan A — each descriptor independently draws a target unit from the pool;
* plan B — one target unit is drawn per caption and applied to all
  descriptors;
* fixed  — every descriptor is remapped to one configured unit.

Draws come from a keyed counter-based generator: the (seed, caption id,
descriptor index) triple is hashed and the digest is used as the random
word, so serial and parallel corpus runs produce byte-identical output
regardless of scheduling.  The physical length of every descriptor is
preserved exactly (equal micrometer counts before and after).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import NonRenderable
from .text3d import Caption, DistanceDescriptor, LengthUnit, format_value, render

DEFAULT_POOL = (LengthUnit.METER, LengthUnit.DECIMETER, LengthUnit.CENTIMETER)

PLAN_A = "A"
PLAN_B = "B"
PLAN_FIXED = "fixed"


@dataclass(frozen=True)
class AugmentConfig:
    unit_pool: tuple[LengthUnit, ...] = DEFAULT_POOL
    plan: str = PLAN_A
    fixed_unit: Optional[LengthUnit] = None
    seed: int = 0

    def __post_init__(self):
        if not self.unit_pool:
            raise ValueError("unit pool must not be empty")
        if len(set(self.unit_pool)) != len(self.unit_pool):
            raise ValueError("unit pool must not contain duplicates")
        if self.plan not in (PLAN_A, PLAN_B, PLAN_FIXED):
            raise ValueError(f"unknown plan: {self.plan!r}")
        if self.plan == PLAN_FIXED and self.fixed_unit is None:
            raise ValueError("fixed plan needs fixed_unit")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class AugmentedCaption:
    source_id: str
    text: str
    # (descriptor index, source unit, target unit) per descriptor
    mapping: tuple[tuple[int, LengthUnit, LengthUnit], ...] = field(default_factory=tuple)

    def to_record(self) -> dict:
        return {
            "id": self.source_id,
            "text": self.text,
            "mapping": [[i, src.word, tgt.word] for i, src, tgt in self.mapping],
        }


# Per-caption draws use descriptor index -1 so they never collide with
# per-descriptor streams.
def _keyed_draw(seed: int, caption_id: str, index: int, n: int) -> int:
    """Uniform integer in [0, n) from the keyed stream, exactly unbiased."""
    limit = (2**64 // n) * n
    round_no = 0
    while True:
        material = struct.pack("<Q", seed) + b"\x00" + caption_id.encode("utf-8") \
            + b"\x00" + struct.pack("<qI", index, round_no)
        word = int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "little")
        if word < limit:
            return word % n
        round_no += 1


def remap_descriptor(d: DistanceDescriptor, target: LengthUnit) -> DistanceDescriptor:
    """The same physical length re-expressed in ``target``.

    Identity remaps return the descriptor unchanged.  The returned span is
    relative to the descriptor's own rendered text; callers that splice
    into a caption recompute spans afterwards.
    """
    if target is d.unit:
        return d
    surface = render(d.micrometers, target, d.form, d.attribute)
    return DistanceDescriptor(
        start=0,
        end=len(surface.encode("utf-8")),
        value_text=format_value(d.micrometers, target),
        unit=target,
        micrometers=d.micrometers,
        form=d.form,
        attribute=d.attribute,
    )


def _apply_targets(c: Caption, targets: list[LengthUnit]) -> AugmentedCaption:
    """Splice re-rendered descriptors into the caption, bytes outside spans untouched."""
    raw = c.text.encode("utf-8")
    out = bytearray()
    cursor = 0
    mapping = []
    for i, (d, target) in enumerate(zip(c.descriptors, targets)):
        out += raw[cursor:d.start]
        if target is d.unit:
            out += raw[d.start:d.end]
        else:
            out += render(d.micrometers, target, d.form, d.attribute).encode("utf-8")
        cursor = d.end
        mapping.append((i, d.unit, target))
    out += raw[cursor:]
    return AugmentedCaption(source_id=c.id, text=out.decode("utf-8"), mapping=tuple(mapping))


def augment_plan_a(c: Caption, cfg: AugmentConfig) -> AugmentedCaption:
    """Independently draw a target unit per descriptor."""
    if cfg.plan != PLAN_A:
        raise ValueError(f"config plan is {cfg.plan!r}, expected {PLAN_A!r}")
    pool = cfg.unit_pool
    targets = [
        pool[_keyed_draw(cfg.seed, c.id, i, len(pool))]
        for i in range(len(c.descriptors))
    ]
    return _apply_targets(c, targets)


def augment_plan_b(c: Caption, cfg: AugmentConfig) -> AugmentedCaption:
    """Draw one target unit per caption and apply it to every descriptor."""
    if cfg.plan != PLAN_B:
        raise ValueError(f"config plan is {cfg.plan!r}, expected {PLAN_B!r}")
    pool = cfg.unit_pool
    unit = pool[_keyed_draw(cfg.seed, c.id, -1, len(pool))]
    return _apply_targets(c, [unit] * len(c.descriptors))


def remap_fixed(c: Caption, unit: LengthUnit) -> AugmentedCaption:
    """Deterministically remap every descriptor to ``unit``."""
    return _apply_targets(c, [unit] * len(c.descriptors))


def augment_caption(c: Caption, cfg: AugmentConfig) -> AugmentedCaption:
    if cfg.plan == PLAN_A:
        return augment_plan_a(c, cfg)
    if cfg.plan == PLAN_B:
        return augment_plan_b(c, cfg)
    return remap_fixed(c, cfg.fixed_unit)


def augment_record(line: str, cfg: AugmentConfig) -> tuple[Optional[str], Optional[str]]:
    """Process one JSONL caption record; returns (output line, error message).

    Exactly one of the two is None.  Errors carry the record id when it
    could be read.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        return None, f"invalid JSON: {e}"
    rid = obj.get("id") if isinstance(obj, dict) else None
    try:
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) \
                or not isinstance(obj.get("text"), str):
            raise ValueError('record must be {"id": str, "text": str}')
        caption = Caption.parse(obj["id"], obj["text"])
        out = augment_caption(caption, cfg)
    except (ValueError, NonRenderable) as e:
        return None, f"record {rid!r}: {e}" if rid is not None else str(e)
    return json.dumps(out.to_record(), ensure_ascii=False, separators=(",", ":")), None


def augment_corpus(
    lines: Iterable[str], cfg: AugmentConfig, jobs: int = 1
) -> Iterator[tuple[Optional[str], Optional[str]]]:
    """Stream (output line, error) pairs in input order.

    With ``jobs > 1`` records are processed in a pool; ordering and bytes
    are identical to the serial run because every draw is keyed by record
    content, not scheduling.
    """
    stripped = (ln.rstrip("\n") for ln in lines)
    nonempty = (ln for ln in stripped if ln.strip())
    if jobs <= 1:
        for ln in nonempty:
            yield augment_record(ln, cfg)
        return
    import functools
    import multiprocessing

    with multiprocessing.Pool(jobs) as pool:
        yield from pool.imap(
            functools.partial(augment_record, cfg=cfg), nonempty, chunksize=64
        )
