"""Binary interchange containers for embeddings and named parameter tensors.

Embedding bundle (".emb"), all integers little-endian:

    magic "EMB1" | u16 version=1 | u16 id length | id (UTF-8)
    | u32 n_tokens | u32 dim | mask (n_tokens bytes, 0/1)
    | data (n_tokens*dim float32, row-major)

Parameter checkpoint (".prm"), same container family:

    magic "PRM1" | u16 version=1 | u32 tensor count
    then per tensor: u16 name length | name (UTF-8) | u8 ndim
    | u32 dims... | data (float64, row-major)

Values are stored as binary32 in bundles (matching exporter precision) and
widened to binary64 for in-core math.  Serialization is canonical: equal
bundles produce equal byte streams.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import DataError, FormatError

EMB_MAGIC = b"EMB1"
PRM_MAGIC = b"PRM1"
VERSION = 1

Source = Union[str, Path, bytes, BinaryIO]
Sink = Union[str, Path, BinaryIO]


@dataclass
class EmbeddingBundle:
    """Per-token embeddings with a validity mask (1 = real token, 0 = padding)."""

    caption_id: str
    mask: np.ndarray   # (n_tokens,) uint8
    data: np.ndarray   # (n_tokens, dim) float32

    def __post_init__(self):
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)

    @property
    def n_tokens(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def data64(self) -> np.ndarray:
        """Values widened to float64 for numeric work."""
        return self.data.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingBundle):
            return NotImplemented
        return (
            self.caption_id == other.caption_id
            and np.array_equal(self.mask, other.mask)
            and self.data.shape == other.data.shape
            and np.array_equal(
                self.data.view(np.uint32), other.data.view(np.uint32)
            )
        )


def _check_bundle(b: EmbeddingBundle) -> list[str]:
    issues = []
    if b.data.ndim != 2:
        issues.append(f"data must be 2-D, got shape {b.data.shape}")
        return issues
    if b.mask.ndim != 1 or b.mask.shape[0] != b.data.shape[0]:
        issues.append(
            f"mask length {b.mask.shape} does not match n_tokens {b.data.shape[0]}"
        )
    bad = np.unique(b.mask[(b.mask != 0) & (b.mask != 1)])
    if bad.size:
        issues.append(f"mask contains values other than 0/1: {bad.tolist()}")
    elif b.mask.size and not b.mask.any():
        issues.append("empty mask: no token is marked real")
    nonfinite = ~np.isfinite(b.data)
    if nonfinite.any():
        i, j = np.argwhere(nonfinite)[0]
        issues.append(f"non-finite value at ({i}, {j})")
    if b.data.shape[0] == 0 or b.data.shape[1] == 0:
        issues.append(f"degenerate shape {b.data.shape}")
    return issues


def _read_source(source: Source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def _open_sink(sink: Sink):
    if isinstance(sink, (str, Path)):
        return open(sink, "wb"), True
    return sink, False


def write_bundle(b: EmbeddingBundle, sink: Sink) -> None:
    """Serialize a bundle; raises DataError if it violates an invariant."""
    issues = _check_bundle(b)
    if issues:
        raise DataError("; ".join(issues))
    ident = b.caption_id.encode("utf-8")
    if len(ident) > 0xFFFF:
        raise DataError("caption id longer than 65535 bytes")
    out, close = _open_sink(sink)
    try:
        out.write(EMB_MAGIC)
        out.write(struct.pack("<HH", VERSION, len(ident)))
        out.write(ident)
        out.write(struct.pack("<II", b.n_tokens, b.dim))
        out.write(b.mask.tobytes())
        out.write(b.data.astype("<f4", copy=False).tobytes())
    finally:
        if close:
            out.close()


def bundle_to_bytes(b: EmbeddingBundle) -> bytes:
    buf = io.BytesIO()
    write_bundle(b, buf)
    return buf.getvalue()


class _Cursor:
    """Sequential reader that names the section any truncation falls in."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, section: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated {section}: need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def done(self) -> bool:
        return self.pos == len(self.data)


def _parse_bundle(raw: bytes) -> EmbeddingBundle:
    cur = _Cursor(raw)
    magic = cur.take(4, "magic")
    if magic != EMB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMB_MAGIC!r}")
    version, id_len = struct.unpack("<HH", cur.take(4, "version/id-length header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    ident = cur.take(id_len, "caption id").decode("utf-8")
    n_tokens, dim = struct.unpack("<II", cur.take(8, "shape header"))
    mask = np.frombuffer(cur.take(n_tokens, "mask"), dtype=np.uint8)
    data = np.frombuffer(
        cur.take(n_tokens * dim * 4, "data"), dtype="<f4"
    ).reshape(n_tokens, dim)
    if not cur.done():
        raise FormatError(f"{len(raw) - cur.pos} trailing bytes after data")
    return EmbeddingBundle(caption_id=ident, mask=mask.copy(), data=data.copy())


def read_bundle(source: Source) -> EmbeddingBundle:
    """Parse a bundle; FormatError for structural problems, DataError for invariants."""
    b = _parse_bundle(_read_source(source))
    issues = _check_bundle(b)
    if issues:
        raise DataError("; ".join(issues))
    return b


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_bundle(source: Source) -> ValidationReport:
    """Every violated invariant of a serialized bundle; empty report iff valid."""
    try:
        raw = _read_source(source)
    except OSError as e:
        return ValidationReport([f"unreadable source: {e}"])
    try:
        b = _parse_bundle(raw)
    except FormatError as e:
        return ValidationReport([str(e)])
    report = ValidationReport(_check_bundle(b))
    # list every non-finite coordinate, not just the first
    nonfinite = np.argwhere(~np.isfinite(b.data))
    if len(nonfinite) > 1:
        extra = [f"non-finite value at ({i}, {j})" for i, j in nonfinite[1:17]]
        report.issues.extend(extra)
    return report


def write_params(params: dict[str, np.ndarray], sink: Sink) -> None:
    """Serialize named float64 tensors to the PRM1 container."""
    out, close = _open_sink(sink)
    try:
        out.write(PRM_MAGIC)
        out.write(struct.pack("<HI", VERSION, len(params)))
        for name, tensor in params.items():
            arr = np.asarray(tensor, dtype="<f8")  # tobytes() C-orders any layout
            if not np.isfinite(arr).all():
                raise DataError(f"tensor {name!r} contains non-finite values")
            encoded = name.encode("utf-8")
            out.write(struct.pack("<H", len(encoded)))
            out.write(encoded)
            out.write(struct.pack("<B", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.write(arr.tobytes())
    finally:
        if close:
            out.close()


def read_params(source: Source) -> dict[str, np.ndarray]:
    raw = _read_source(source)
    cur = _Cursor(raw)
    magic = cur.take(4, "magic")
    if magic != PRM_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PRM_MAGIC!r}")
    version, count = struct.unpack("<HI", cur.take(6, "version/count header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    params: dict[str, np.ndarray] = {}
    for k in range(count):
        (name_len,) = struct.unpack("<H", cur.take(2, f"tensor {k} name length"))
        name = cur.take(name_len, f"tensor {k} name").decode("utf-8")
        (ndim,) = struct.unpack("<B", cur.take(1, f"tensor {name!r} rank"))
        shape = struct.unpack(f"<{ndim}I", cur.take(4 * ndim, f"tensor {name!r} dims"))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(
            cur.take(size * 8, f"tensor {name!r} data"), dtype="<f8"
        ).reshape(shape)
        params[name] = data.copy()
    if not cur.done():
        raise FormatError(f"{len(raw) - cur.pos} trailing bytes after last tensor")
    return params
