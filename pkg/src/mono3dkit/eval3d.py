"""Accuracy-at-IoU evaluation with scenario bucketing.

Records are bucketed three ways, each a disjoint cover: depth (near
[0, 15) m, medium [15, 35) m, far [35, inf) m), difficulty (easy: no
occlusion and truncation < 0.15; moderate: at most partial occlusion and
truncation < 0.3, unless already easy; hard: the rest), and ambiguity
(unique vs multiple same-category candidates).  Accuracy at threshold tau
is the fraction of records whose predicted/ground-truth oriented 3D IoU
reaches tau.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from .errors import EmptySet
from .losses import Box3D, iou3d

OCCLUSION_NONE = 0
OCCLUSION_PARTIAL = 1
OCCLUSION_SEVERE = 2

DEPTH_BUCKETS = ("near", "medium", "far")
DIFFICULTY_BUCKETS = ("easy", "moderate", "hard")
AMBIGUITY_BUCKETS = ("unique", "multiple")
ALL_BUCKETS = ("overall",) + AMBIGUITY_BUCKETS + DEPTH_BUCKETS + DIFFICULTY_BUCKETS

EASY_TRUNCATION = 0.15
MODERATE_TRUNCATION = 0.3
NEAR_LIMIT_M = 15.0
MEDIUM_LIMIT_M = 35.0


@dataclass(frozen=True)
class ScenarioRecord:
    id: str
    gt: Box3D
    pred: Box3D
    depth_m: float
    occlusion: int
    truncation: float
    multiple: bool

    def __post_init__(self):
        if self.depth_m < 0:
            raise ValueError(f"depth must be non-negative, got {self.depth_m}")
        if not 0.0 <= self.truncation <= 1.0:
            raise ValueError(f"truncation must lie in [0, 1], got {self.truncation}")
        if self.occlusion not in (OCCLUSION_NONE, OCCLUSION_PARTIAL, OCCLUSION_SEVERE):
            raise ValueError(f"occlusion level must be 0, 1, or 2, got {self.occlusion}")

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioRecord":
        return cls(
            id=str(obj["id"]),
            gt=Box3D.from_dict(obj["gt"]),
            pred=Box3D.from_dict(obj["pred"]),
            depth_m=float(obj["depth"]),
            occlusion=int(obj["occlusion"]),
            truncation=float(obj["truncation"]),
            multiple=bool(obj["multiple"]),
        )


def bucket(record: ScenarioRecord) -> set[str]:
    """Scenario labels for one record: one per partition, plus "overall"."""
    if record.depth_m < NEAR_LIMIT_M:
        depth = "near"
    elif record.depth_m < MEDIUM_LIMIT_M:
        depth = "medium"
    else:
        depth = "far"
    if record.occlusion == OCCLUSION_NONE and record.truncation < EASY_TRUNCATION:
        difficulty = "easy"
    elif record.occlusion <= OCCLUSION_PARTIAL and record.truncation < MODERATE_TRUNCATION:
        difficulty = "moderate"
    else:
        difficulty = "hard"
    ambiguity = "multiple" if record.multiple else "unique"
    return {"overall", depth, difficulty, ambiguity}


def accuracy_at(records: Sequence[ScenarioRecord], tau: float) -> float:
    """Fraction of records whose gt/pred oriented 3D IoU is at least tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    records = list(records)
    if not records:
        raise EmptySet("no records to evaluate")
    hits = sum(1 for r in records if iou3d(r.gt, r.pred) >= tau)
    return hits / len(records)


@dataclass
class ScenarioTable:
    thresholds: tuple[float, ...]
    # bucket -> {"count": int, "acc@<tau>": float | None}
    rows: dict[str, dict]

    def to_dict(self) -> dict:
        return {"thresholds": list(self.thresholds), "buckets": self.rows}

    def to_csv_rows(self) -> list[list]:
        header = ["bucket", "count"] + [f"acc@{t:g}" for t in self.thresholds]
        out = [header]
        for name in ALL_BUCKETS:
            row = self.rows[name]
            out.append(
                [name, row["count"]]
                + [
                    "" if row[f"acc@{t:g}"] is None else repr(row[f"acc@{t:g}"])
                    for t in self.thresholds
                ]
            )
        return out


def scenario_report(
    records: Sequence[ScenarioRecord],
    thresholds: Sequence[float] = (0.25, 0.5),
) -> ScenarioTable:
    """Per-bucket accuracies at each threshold; empty buckets report None."""
    records = list(records)
    if not records:
        raise EmptySet("no records to evaluate")
    thresholds = tuple(float(t) for t in thresholds)
    ious = [iou3d(r.gt, r.pred) for r in records]
    members: dict[str, list[int]] = {name: [] for name in ALL_BUCKETS}
    for i, record in enumerate(records):
        for name in bucket(record):
            members[name].append(i)
    rows = {}
    for name in ALL_BUCKETS:
        idx = members[name]
        row: dict = {"count": len(idx)}
        for t in thresholds:
            if idx:
                row[f"acc@{t:g}"] = sum(1 for i in idx if ious[i] >= t) / len(idx)
            else:
                row[f"acc@{t:g}"] = None
        rows[name] = row
    return ScenarioTable(thresholds=thresholds, rows=rows)


def read_records(path: Union[str, Path]) -> list[ScenarioRecord]:
    """Scenario JSONL: {"id", "gt": box, "pred": box, "depth", "occlusion",
    "truncation", "multiple"} with boxes as {"x","y","z","w","h","l","yaw"}."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(ScenarioRecord.from_dict(json.loads(line)))
        except (KeyError, ValueError, TypeError) as e:
            raise ValueError(f"record on line {n}: {e}") from e
    return out
