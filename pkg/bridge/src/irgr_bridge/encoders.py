"""Sentence encoders the export job can run locally.

The built-in hash encoder needs no model downloads and keeps integration
tests hermetic; any sentence-transformers checkpoint can be named instead
when that package is installed.
"""

from __future__ import annotations

import hashlib

import numpy as np

LOCAL_ENCODER_NAME = "local-hash"
DEFAULT_DIM = 768


class ModelLoadError(Exception):
    """The named encoder model cannot be loaded on this machine."""


class LocalHashEncoder:
    """Deterministic character n-gram hashing into a fixed-width space.

    Not a learned model: nearby surface forms land near each other, which
    is all the integration tests need.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _features(self, text: str) -> list[str]:
        squashed = " ".join(text.lower().split())
        padded = f" {squashed} "
        grams = [padded[i : i + 4] for i in range(len(padded) - 3)]
        return grams or [padded]

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            if not text.strip():
                raise ValueError("cannot encode empty text")
            for gram in self._features(text):
                digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
                value = int.from_bytes(digest, "little")
                slot = value % self.dim
                sign = 1.0 if (value >> 63) & 1 else -1.0
                out[row, slot] += sign
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class _SentenceTransformerEncoder:
    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError(
                f"model {model_name!r} needs the sentence-transformers package"
            ) from exc
        try:
            self._model = SentenceTransformer(model_name)
        except Exception as exc:
            raise ModelLoadError(f"cannot load model {model_name!r}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        return np.asarray(
            self._model.encode(texts, normalize_embeddings=True), dtype=np.float64
        )


def resolve_encoder(name: str):
    """Map an encoder name to a ready instance; unknown names are treated
    as sentence-transformers checkpoints."""
    if name == LOCAL_ENCODER_NAME:
        return LocalHashEncoder()
    return _SentenceTransformerEncoder(name)
