"""Small shared helpers."""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

_WS_RE = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace; used for dedupe and identity checks."""
    return _WS_RE.sub(" ", text.strip()).lower()


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokenization."""
    return text.lower().split()


def ngrams(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dump_json(obj: object) -> str:
    """Deterministic JSON rendering for output artifacts."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def identity_key(premise_id: str | None, text: str) -> str:
    """Stable identity for a leaf sentence: corpus id when bound, else the
    normalized text itself."""
    return premise_id if premise_id is not None else f"text:{normalize_text(text)}"
