"""Export corpus sentences as a vector file."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .encoders import LOCAL_ENCODER_NAME, resolve_encoder
from .vectors import IoError, write_vectors

DEFAULT_BATCH_SIZE = 64


@dataclass(frozen=True)
class ExportJob:
    """One export run: which corpus, which encoder, where to write."""

    corpus: Path
    out: Path
    model: str = LOCAL_ENCODER_NAME
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def read_corpus(path: str | Path) -> dict[str, str]:
    """Read tab-separated ``id<TAB>sentence`` lines, insertion order."""
    entries: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read corpus {path}: {exc}") from exc
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise IoError(f"{path}:{number}: expected id<TAB>sentence")
        record_id, sentence = line.split("\t", 1)
        entries[record_id] = sentence
    return entries


def export_embeddings(job: ExportJob) -> int:
    """Encode every corpus sentence and write the vector file.

    Returns the record count. Identical sentences produce identical vectors
    because encoding depends on text alone.
    """
    entries = read_corpus(job.corpus)
    encoder = resolve_encoder(job.model)
    ids = list(entries)
    vectors = {}
    for start in range(0, len(ids), job.batch_size):
        chunk = ids[start : start + job.batch_size]
        encoded = encoder.encode_batch([entries[i] for i in chunk])
        for record_id, vector in zip(chunk, encoded):
            vectors[record_id] = vector
    write_vectors(job.out, vectors)
    return len(vectors)
