"""Text encoders, vector file IO and retrieval-encoder training.

The built-in encoder hashes character 3-5-grams into a fixed number of
buckets with sublinear term-frequency weights and L2-normalizes the result.
It is deterministic across runs and platforms; higher-quality sentence
vectors can be supplied externally through the IRGRVEC file format and a
linear re-embedding (:class:`EncoderAdapter`) can be trained on top of any
base encoder with relevance-labeled query/premise pairs.
"""

from __future__ import annotations

import base64
import json
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from math import log
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .corpus import ExampleRecord, PremiseCorpus
from .trees import EntailmentStep, EntailmentTree
from .util import normalize_text

VECTOR_MAGIC = b"IRGRVEC1"

QUERY_SEPARATOR = "; "
ANTECEDENT_JOINER = " and "

DEFAULT_PARTIAL_LABEL = 0.75
DEFAULT_NEGATIVES_PER_POSITIVE = 4
DEFAULT_HARD_NEGATIVE_FRACTION = 0.5


class EmptyTextError(ValueError):
    pass


class VectorFormatError(Exception):
    """An IRGRVEC file is malformed or truncated."""


class DimensionMismatchError(Exception):
    pass


class UnknownIdError(Exception):
    pass


class DivergenceError(Exception):
    """Training produced a non-finite loss."""


class EmptyDatasetError(ValueError):
    pass


class Encoder(Protocol):
    """Deterministic text -> unit vector mapping with a fixed dimension."""

    dim: int

    def encode(self, text: str) -> np.ndarray: ...


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return vector / norm


class HashedNgramEncoder:
    """Character 3-5-gram hashing encoder.

    Each distinct n-gram of the normalized text is hashed to one of ``dim``
    buckets with a +-1 sign and weight ``1 + log(tf)``; the bucket vector is
    L2-normalized. CRC32 with two fixed salts keeps the mapping stable across
    processes and platforms.
    """

    def __init__(self, dim: int = 768, seed: int = 0, ngram_range: tuple[int, int] = (3, 5)):
        if dim < 2:
            raise ValueError("dim must be at least 2")
        self.dim = dim
        self.seed = seed
        self.ngram_range = ngram_range
        self._bucket_salt = zlib.crc32(b"bucket", seed & 0xFFFFFFFF)
        self._sign_salt = zlib.crc32(b"sign", seed & 0xFFFFFFFF)

    def config(self) -> dict:
        return {
            "type": "hashed-ngram",
            "dim": self.dim,
            "seed": self.seed,
            "ngram_range": list(self.ngram_range),
        }

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyTextError("cannot encode empty text")
        padded = f" {normalize_text(text)} ".encode("utf-8")
        lo, hi = self.ngram_range
        counts: Counter[bytes] = Counter()
        for n in range(lo, hi + 1):
            for i in range(len(padded) - n + 1):
                counts[padded[i : i + n]] += 1
        vector = np.zeros(self.dim, dtype=np.float64)
        crc = zlib.crc32
        for gram, count in counts.items():
            bucket = crc(gram, self._bucket_salt) % self.dim
            sign = 1.0 if crc(gram, self._sign_salt) & 1 else -1.0
            vector[bucket] += sign * (1.0 + log(count))
        return _unit(vector)


class PrecomputedEncoder:
    """Serves externally supplied vectors by normalized text lookup, with an
    optional fallback encoder for unseen texts (queries, concatenations)."""

    def __init__(self, vectors: dict[str, np.ndarray], fallback: Encoder | None = None):
        if not vectors:
            raise ValueError("no vectors supplied")
        dims = {v.shape[0] for v in vectors.values()}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed vector dimensions: {sorted(dims)}")
        self.dim = dims.pop()
        if fallback is not None and fallback.dim != self.dim:
            raise DimensionMismatchError(
                f"fallback dim {fallback.dim} != vector dim {self.dim}"
            )
        self._table = {normalize_text(k): _unit(np.asarray(v, dtype=np.float64))
                       for k, v in vectors.items()}
        self._fallback = fallback

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyTextError("cannot encode empty text")
        hit = self._table.get(normalize_text(text))
        if hit is not None:
            return hit
        if self._fallback is None:
            raise UnknownIdError(f"no vector for text {text[:60]!r}")
        return self._fallback.encode(text)


def compose_step_text(antecedent_texts: Iterable[str], conclusion_text: str) -> str:
    """Textual form of one entailment step for query composition."""
    return ANTECEDENT_JOINER.join(antecedent_texts) + QUERY_SEPARATOR + conclusion_text


def step_surface_text(tree: EntailmentTree, step: EntailmentStep) -> str:
    return compose_step_text(
        (tree.text_of(a) for a in step.antecedents),
        tree.hypothesis_text if step.conclusion.is_hypothesis
        else (step.conclusion_text or ""),
    )


def compose_query_text(hypothesis: str, step_text: str | None = None) -> str:
    if step_text is None:
        return hypothesis
    return hypothesis + QUERY_SEPARATOR + step_text


def encode_query(
    encoder: Encoder, hypothesis: str, step_text: str | None = None
) -> np.ndarray:
    """Encode the hypothesis, optionally concatenated with the previous
    step's textual form."""
    if not hypothesis or not hypothesis.strip():
        raise EmptyTextError("hypothesis must be non-empty")
    return encoder.encode(compose_query_text(hypothesis, step_text))


# --------------------------------------------------------------------------
# IRGRVEC vector files
# --------------------------------------------------------------------------


def save_vectors(path: str | Path, vectors: dict[str, np.ndarray]) -> None:
    """Write id -> vector maps in the IRGRVEC binary layout (little-endian,
    float32 payload)."""
    dims = {np.asarray(v).shape[0] for v in vectors.values()}
    if len(dims) > 1:
        raise DimensionMismatchError(f"mixed vector dimensions: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "wb") as handle:
        handle.write(VECTOR_MAGIC)
        handle.write(struct.pack("<II", dim, len(vectors)))
        for premise_id, vector in vectors.items():
            raw = premise_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise VectorFormatError(f"id too long: {premise_id[:40]!r}")
            handle.write(struct.pack("<H", len(raw)))
            handle.write(raw)
            handle.write(np.asarray(vector, dtype="<f4").tobytes())


def load_vectors(
    path: str | Path,
    corpus: PremiseCorpus | None = None,
    expect_dim: int | None = None,
) -> dict[str, np.ndarray]:
    """Load an IRGRVEC file; vectors are renormalized to unit length.

    With a corpus given, every id must belong to it. ``expect_dim`` guards
    against mixing encoders of different widths.
    """
    with open(path, "rb") as handle:
        data = handle.read()
    if data[: len(VECTOR_MAGIC)] != VECTOR_MAGIC:
        raise VectorFormatError(f"{path}: bad magic bytes")
    offset = len(VECTOR_MAGIC)
    if len(data) < offset + 8:
        raise VectorFormatError(f"{path}: truncated header")
    dim, count = struct.unpack_from("<II", data, offset)
    offset += 8
    if expect_dim is not None and dim != expect_dim:
        raise DimensionMismatchError(f"{path}: dimension {dim}, expected {expect_dim}")
    row_bytes = 4 * dim
    vectors: dict[str, np.ndarray] = {}
    for i in range(count):
        if offset + 2 > len(data):
            raise VectorFormatError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + row_bytes > len(data):
            raise VectorFormatError(f"{path}: truncated at record {i}")
        premise_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vector = np.frombuffer(data[offset : offset + row_bytes], dtype="<f4")
        offset += row_bytes
        if corpus is not None and premise_id not in corpus:
            raise UnknownIdError(f"{path}: id {premise_id!r} not in corpus")
        norm = float(np.linalg.norm(vector))
        if not np.isfinite(norm) or norm == 0.0:
            raise VectorFormatError(f"{path}: non-normalizable vector for {premise_id!r}")
        vectors[premise_id] = np.asarray(vector, dtype=np.float64) / norm
    if offset != len(data):
        raise VectorFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return vectors


# --------------------------------------------------------------------------
# Training pairs and the linear adapter
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingPair:
    """One query/premise example with its relevance label.

    Labels are 1 for gold leaves used in the query's previous step, the
    partial label for other gold leaves, and 0 for sampled negatives.
    """

    query_text: str
    premise_text: str
    label: float
    is_hard_negative: bool = False


def build_training_pairs(
    records: list[ExampleRecord],
    corpus: PremiseCorpus,
    encoder: Encoder,
    partial_label: float = DEFAULT_PARTIAL_LABEL,
    negatives_per_positive: int = DEFAULT_NEGATIVES_PER_POSITIVE,
    hard_negative_fraction: float = DEFAULT_HARD_NEGATIVE_FRACTION,
    seed: int = 0,
) -> list[TrainingPair]:
    """Build labeled query/premise pairs from gold trees.

    For each step of each gold tree, every gold leaf becomes a positive pair
    with the step's query; negatives are drawn from the rest of the corpus,
    split between uniform random picks and hard negatives ranked by the
    untrained base encoder.
    """
    if not records:
        raise EmptyDatasetError("no records to build training pairs from")
    if not 0.0 <= partial_label <= 1.0:
        raise ValueError("partial_label must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    corpus_ids = list(corpus.entries)
    corpus_matrix = None

    pairs: list[TrainingPair] = []
    for record in records:
        tree = record.gold_tree()
        gold_ids = {
            b.premise_id for b in record.leaf_bindings.values() if b.premise_id
        }
        gold_norm = {normalize_text(t) for t in tree.leaves.values()}

        for t, step in enumerate(tree.steps, start=1):
            prev = tree.steps[t - 2] if t >= 2 else None
            query = compose_query_text(
                record.hypothesis,
                step_surface_text(tree, prev) if prev is not None else None,
            )
            prev_leaf_refs = (
                set(prev.antecedent_leaf_refs()) if prev is not None else set()
            )
            for ref, text in tree.leaves.items():
                label = 1.0 if ref in prev_leaf_refs else partial_label
                pairs.append(TrainingPair(query, text, label))

            n_negatives = negatives_per_positive * len(tree.leaves)
            n_hard = int(round(n_negatives * hard_negative_fraction))
            candidates = [
                pid
                for pid in corpus_ids
                if pid not in gold_ids
                and normalize_text(corpus.entries[pid]) not in gold_norm
            ]
            if not candidates:
                continue
            hard_ids: list[str] = []
            if n_hard > 0:
                if corpus_matrix is None:
                    corpus_matrix = np.stack(
                        [encoder.encode(corpus.entries[pid]) for pid in corpus_ids]
                    )
                scores = corpus_matrix @ encoder.encode(query)
                order = np.argsort(-scores, kind="stable")
                for idx in order:
                    pid = corpus_ids[int(idx)]
                    if pid in gold_ids:
                        continue
                    if normalize_text(corpus.entries[pid]) in gold_norm:
                        continue
                    hard_ids.append(pid)
                    if len(hard_ids) == n_hard:
                        break
            n_random = n_negatives - len(hard_ids)
            pool = [pid for pid in candidates if pid not in set(hard_ids)]
            take = min(n_random, len(pool))
            random_ids = (
                [pool[i] for i in rng.choice(len(pool), size=take, replace=False)]
                if take
                else []
            )
            for pid in hard_ids:
                pairs.append(TrainingPair(query, corpus.entries[pid], 0.0, True))
            for pid in random_ids:
                pairs.append(TrainingPair(query, corpus.entries[pid], 0.0, False))
    return pairs


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.5
    epochs: int = 50
    batch_size: int | None = None  # None = full batch
    seed: int = 0


@dataclass(frozen=True)
class EncoderAdapter:
    """Square re-embedding matrix applied to base vectors before
    renormalization; the identity matrix is a no-op."""

    matrix: np.ndarray
    config: TrainingConfig = field(default_factory=TrainingConfig)
    loss_curve: tuple[float, ...] = ()

    @staticmethod
    def identity(dim: int, config: TrainingConfig | None = None) -> EncoderAdapter:
        return EncoderAdapter(np.eye(dim), config or TrainingConfig())

    def apply(self, vector: np.ndarray) -> np.ndarray:
        return _unit(self.matrix @ vector)

    def wrap(self, encoder: Encoder) -> AdaptedEncoder:
        return AdaptedEncoder(encoder, self)


class AdaptedEncoder:
    """Base encoder composed with a trained linear adapter."""

    def __init__(self, base: Encoder, adapter: EncoderAdapter):
        if adapter.matrix.shape != (base.dim, base.dim):
            raise DimensionMismatchError(
                f"adapter {adapter.matrix.shape} does not fit encoder dim {base.dim}"
            )
        self.base = base
        self.adapter = adapter
        self.dim = base.dim

    def encode(self, text: str) -> np.ndarray:
        return self.adapter.apply(self.base.encode(text))


def _pair_matrices(
    pairs: list[TrainingPair], encoder: Encoder
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cache: dict[str, np.ndarray] = {}

    def enc(text: str) -> np.ndarray:
        hit = cache.get(text)
        if hit is None:
            hit = cache[text] = encoder.encode(text)
        return hit

    queries = np.stack([enc(p.query_text) for p in pairs])
    premises = np.stack([enc(p.premise_text) for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    return queries, premises, labels


def _loss_terms(
    matrix: np.ndarray, queries: np.ndarray, premises: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    a = queries @ matrix.T
    b = premises @ matrix.T
    a_norm = np.linalg.norm(a, axis=1, keepdims=True)
    b_norm = np.linalg.norm(b, axis=1, keepdims=True)
    a_hat = a / a_norm
    b_hat = b / b_norm
    cosines = np.einsum("ij,ij->i", a_hat, b_hat)
    residuals = labels - cosines
    return float(np.mean(residuals**2)), residuals, a_hat / a_norm, b_hat / b_norm


def loss(pairs: list[TrainingPair], adapter: EncoderAdapter, encoder: Encoder) -> float:
    """Mean squared difference between labels and adapted cosine similarity."""
    if not pairs:
        raise EmptyDatasetError("no pairs")
    queries, premises, labels = _pair_matrices(pairs, encoder)
    return loss_from_vectors(adapter.matrix, queries, premises, labels)


def loss_from_vectors(
    matrix: np.ndarray, queries: np.ndarray, premises: np.ndarray, labels: np.ndarray
) -> float:
    value, _, _, _ = _loss_terms(matrix, queries, premises, labels)
    return value


def loss_gradient(
    matrix: np.ndarray, queries: np.ndarray, premises: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Analytic gradient of the mean-squared cosine loss in the matrix."""
    a = queries @ matrix.T
    b = premises @ matrix.T
    a_norm = np.linalg.norm(a, axis=1, keepdims=True)
    b_norm = np.linalg.norm(b, axis=1, keepdims=True)
    a_hat = a / a_norm
    b_hat = b / b_norm
    cosines = np.einsum("ij,ij->i", a_hat, b_hat)
    residuals = labels - cosines
    # d cos / dW = ((b_hat - cos a_hat)/|a|) q^T + ((a_hat - cos b_hat)/|b|) c^T
    coeff = -2.0 * residuals[:, None] / len(labels)
    da = coeff * (b_hat - cosines[:, None] * a_hat) / a_norm
    db = coeff * (a_hat - cosines[:, None] * b_hat) / b_norm
    return da.T @ queries + db.T @ premises


def train_adapter(
    pairs: list[TrainingPair],
    encoder: Encoder,
    config: TrainingConfig = TrainingConfig(),
) -> EncoderAdapter:
    """Gradient descent on the cosine loss starting from the identity matrix.

    The best matrix seen over the epochs is returned, so the final training
    loss never exceeds the initial one. Non-finite loss raises
    :class:`DivergenceError`.
    """
    if not pairs:
        raise EmptyDatasetError("no pairs")
    if config.learning_rate < 0:
        raise ValueError("learning rate must be non-negative")
    queries, premises, labels = _pair_matrices(pairs, encoder)
    dim = queries.shape[1]
    matrix = np.eye(dim)
    rng = np.random.default_rng(config.seed)

    curve = [loss_from_vectors(matrix, queries, premises, labels)]
    best = (curve[0], matrix.copy())
    n = len(pairs)
    for _ in range(config.epochs):
        if config.batch_size is None or config.batch_size >= n:
            grad = loss_gradient(matrix, queries, premises, labels)
            matrix = matrix - config.learning_rate * grad
        else:
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                grad = loss_gradient(matrix, queries[idx], premises[idx], labels[idx])
                matrix = matrix - config.learning_rate * grad
        value = loss_from_vectors(matrix, queries, premises, labels)
        if not np.isfinite(value):
            raise DivergenceError(f"loss became non-finite ({value})")
        curve.append(value)
        if value < best[0]:
            best = (value, matrix.copy())
    return EncoderAdapter(best[1], config, tuple(curve))


def save_adapter(
    path: str | Path, adapter: EncoderAdapter, extra: dict | None = None
) -> None:
    """Persist an adapter as JSON: config, loss curve, base64 row-major
    float64 matrix. ``extra`` keys ride along for run bookkeeping."""
    matrix = np.ascontiguousarray(adapter.matrix, dtype="<f8")
    payload = {
        **(extra or {}),
        "dim": int(matrix.shape[0]),
        "matrix": base64.b64encode(matrix.tobytes()).decode("ascii"),
        "config": {
            "learning_rate": adapter.config.learning_rate,
            "epochs": adapter.config.epochs,
            "batch_size": adapter.config.batch_size,
            "seed": adapter.config.seed,
        },
        "loss_curve": list(adapter.loss_curve),
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_adapter(path: str | Path) -> EncoderAdapter:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        dim = int(payload["dim"])
        raw = base64.b64decode(payload["matrix"])
        config = TrainingConfig(**payload["config"])
        curve = tuple(float(v) for v in payload["loss_curve"])
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise VectorFormatError(f"{path}: unreadable adapter file: {exc}") from exc
    if len(raw) != 8 * dim * dim:
        raise VectorFormatError(f"{path}: matrix payload size mismatch")
    matrix = np.frombuffer(raw, dtype="<f8").reshape(dim, dim).copy()
    return EncoderAdapter(matrix, config, curve)
