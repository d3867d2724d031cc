"""Masked embedding similarity between original/augmented caption pairs.

Both scores average over masked-in tokens only, so padding rows never
influence the result:

* euclidean similarity: 1 minus the mean per-token channel-wise L2
  distance between the two embedding matrices;
* cosine similarity: mean per-token cosine between corresponding rows.

The euclidean score is not clamped: features with large distances can
drive it negative, which is a property of the formula, not a defect.
Corpus reports average per pair first, then over pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .embfile import EmbeddingBundle, read_bundle
from .errors import MaskMismatch, ShapeMismatch, ZeroNormRow


def _masked_rows(a: EmbeddingBundle, b: EmbeddingBundle) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"bundle shapes differ: {a.data.shape} vs {b.data.shape}")
    if not np.array_equal(a.mask, b.mask):
        raise MaskMismatch("bundle masks differ")
    keep = a.mask == 1
    return a.data64[keep], b.data64[keep]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ZeroNormRow("cannot row-normalize: zero-norm masked-in row")
    return x / norms


def euclidean_similarity(
    a: EmbeddingBundle, b: EmbeddingBundle, normalize_rows: bool = False
) -> float:
    """1 - mean per-token L2 distance over masked-in tokens.

    ``normalize_rows`` optionally L2-normalizes each masked-in row first;
    the default applies the formula to raw features.
    """
    ra, rb = _masked_rows(a, b)
    if normalize_rows:
        ra, rb = _normalize_rows(ra), _normalize_rows(rb)
    distances = np.linalg.norm(ra - rb, axis=1)
    return float(1.0 - distances.mean())


def cosine_similarity(a: EmbeddingBundle, b: EmbeddingBundle) -> float:
    """Mean per-token cosine between corresponding masked-in rows."""
    ra, rb = _masked_rows(a, b)
    na = np.linalg.norm(ra, axis=1)
    nb = np.linalg.norm(rb, axis=1)
    if (na == 0).any() or (nb == 0).any():
        t = int(np.flatnonzero((na == 0) | (nb == 0))[0])
        raise ZeroNormRow(f"masked-in token {t} has zero norm")
    cosines = np.einsum("ij,ij->i", ra, rb) / (na * nb)
    return float(cosines.mean())


@dataclass(frozen=True)
class PairScore:
    id: str
    euclidean: float
    cosine: float


@dataclass
class SimilarityReport:
    n_pairs: int
    mean_euclidean: Optional[float]
    mean_cosine: Optional[float]
    pairs: list[PairScore] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "mean_euclidean": self.mean_euclidean,
            "mean_cosine": self.mean_cosine,
            "pairs": [
                {"id": p.id, "euclidean": p.euclidean, "cosine": p.cosine}
                for p in self.pairs
            ],
            "failures": [{"id": i, "error": e} for i, e in self.failures],
        }

    def to_csv_rows(self) -> list[list]:
        rows = [["id", "euclidean", "cosine"]]
        rows += [[p.id, repr(p.euclidean), repr(p.cosine)] for p in self.pairs]
        return rows


ManifestEntry = dict


def read_manifest(path: Union[str, Path]) -> list[ManifestEntry]:
    """Pair manifest JSONL: {"id", "original": path, "augmented": path}.

    Relative bundle paths are resolved against the manifest's directory.
    """
    path = Path(path)
    entries = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        for key in ("id", "original", "augmented"):
            if key not in obj:
                raise ValueError(f"manifest line {n}: missing {key!r}")
        obj = dict(obj)
        for key in ("original", "augmented"):
            p = Path(obj[key])
            obj[key] = p if p.is_absolute() else path.parent / p
        entries.append(obj)
    return entries


def corpus_similarity(
    manifest: Union[str, Path, Iterable[ManifestEntry]],
    normalize_rows: bool = False,
) -> SimilarityReport:
    """Score every manifest pair; means are taken over successful pairs.

    Per-pair failures (unreadable bundles, shape or mask mismatches) are
    recorded in the report instead of aborting the run.  Output order is
    deterministic: ascending id.
    """
    if isinstance(manifest, (str, Path)):
        entries = read_manifest(manifest)
    else:
        entries = list(manifest)
    pairs: list[PairScore] = []
    failures: list[tuple[str, str]] = []
    for entry in sorted(entries, key=lambda e: e["id"]):
        try:
            a = read_bundle(entry["original"])
            b = read_bundle(entry["augmented"])
            pairs.append(
                PairScore(
                    id=entry["id"],
                    euclidean=euclidean_similarity(a, b, normalize_rows=normalize_rows),
                    cosine=cosine_similarity(a, b),
                )
            )
        except (OSError, ValueError) as e:
            failures.append((entry["id"], str(e)))
    n = len(pairs)
    return SimilarityReport(
        n_pairs=n,
        mean_euclidean=float(np.mean([p.euclidean for p in pairs])) if n else None,
        mean_cosine=float(np.mean([p.cosine for p in pairs])) if n else None,
        pairs=pairs,
        failures=failures,
    )
