"""Writer for the ".emb" embedding-bundle interchange format.

Layout, all integers little-endian:

    magic "EMB1" | u16 version=1 | u16 id length | id (UTF-8)
    | u32 n_tokens | u32 dim | mask (n_tokens bytes, 0/1)
    | data (n_tokens*dim float32, row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
VERSION = 1


def write_embedding_file(
    path: str | Path, caption_id: str, mask: np.ndarray, values: np.ndarray
) -> None:
    mask = np.asarray(mask, dtype=np.uint8)
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2 or mask.shape != (values.shape[0],):
        raise ValueError(
            f"need (n, d) values with an n-long mask, got {values.shape} / {mask.shape}"
        )
    if not mask.any():
        raise ValueError(f"{caption_id!r}: mask marks no real tokens")
    if not np.isfinite(values).all():
        raise ValueError(f"{caption_id!r}: non-finite embedding values")
    ident = caption_id.encode("utf-8")
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<HH", VERSION, len(ident)))
        out.write(ident)
        out.write(struct.pack("<II", values.shape[0], values.shape[1]))
        out.write(mask.tobytes())
        out.write(values.tobytes())
