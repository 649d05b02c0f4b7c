"""Writer for the IRGRVEC binary vector layout.

Layout: ``IRGRVEC1`` magic, u32 dim, u32 count, then per record a u16
id byte-length, the UTF-8 id, and dim little-endian float32 components.
Implemented here from the byte layout alone so this package stays
independent of the consumer.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"IRGRVEC1"


class IoError(Exception):
    """A vector file could not be written."""


def write_vectors(path: str | Path, vectors: dict[str, np.ndarray]) -> None:
    """Write one unit-normalized float32 record per id, insertion order."""
    dims = {np.asarray(v).shape[0] for v in vectors.values()}
    if len(dims) > 1:
        raise IoError(f"mixed vector dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    try:
        with open(path, "wb") as handle:
            handle.write(MAGIC)
            handle.write(struct.pack("<II", dim, len(vectors)))
            for record_id, vector in vectors.items():
                raw = record_id.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise IoError(f"id too long: {record_id[:40]!r}")
                handle.write(struct.pack("<H", len(raw)))
                handle.write(raw)
                array = np.asarray(vector, dtype=np.float64)
                norm = float(np.linalg.norm(array))
                if norm == 0.0 or not np.isfinite(norm):
                    raise IoError(f"unusable vector for id {record_id!r}")
                handle.write((array / norm).astype("<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
