"""Premise retrieval: exact inner-product search, conditional retrieval
and an Okapi BM25 baseline.

Search is brute-force over the full premise matrix; corpora of tens of
thousands of sentences score in milliseconds and every ranking stays exactly
reproducible. Ties are broken by corpus insertion order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from math import log
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .corpus import PremiseCorpus, load_corpus, save_corpus
from .encoding import (
    DimensionMismatchError,
    Encoder,
    HashedNgramEncoder,
    QUERY_SEPARATOR,
    UnknownIdError,
    encode_query,
    load_vectors,
    save_vectors,
)

DEFAULT_FETCH_COUNT = 25
DEFAULT_CONDITIONING_SPLIT = 15


class EmptyIndexError(Exception):
    pass


class EmptyCorpusError(Exception):
    pass


class ExhaustedCorpusError(Exception):
    """More premises requested than the corpus holds."""


class MissingVectorError(Exception):
    pass


class IndexFormatError(Exception):
    pass


@dataclass(frozen=True)
class RankedPremise:
    premise_id: str
    score: float
    probability: float | None = None


@dataclass(frozen=True)
class ConditionalConfig:
    """Knobs for conditional first-iteration retrieval.

    The first ``conditioning_split`` picks depend on the hypothesis alone;
    later picks condition on the hypothesis plus the premises picked so far.
    ``query_mode`` selects how the conditioning set is turned into a query:
    text concatenation (default) or the mean of member vectors.
    """

    fetch_count: int = DEFAULT_FETCH_COUNT
    conditioning_split: int = DEFAULT_CONDITIONING_SPLIT
    max_query_terms: int | None = None
    query_mode: Literal["concat", "average"] = "concat"

    def __post_init__(self) -> None:
        if self.fetch_count < 1:
            raise ValueError("fetch_count must be at least 1")
        if self.conditioning_split < 0:
            raise ValueError("conditioning_split must be non-negative")
        if self.max_query_terms is not None and self.max_query_terms < 1:
            raise ValueError("max_query_terms must be at least 1 when set")


class PremiseIndex:
    """Corpus premises encoded into one row-per-premise unit-vector matrix."""

    def __init__(
        self,
        corpus: PremiseCorpus,
        premise_ids: list[str],
        matrix: np.ndarray,
        encoder: Encoder,
    ):
        if len(premise_ids) != matrix.shape[0]:
            raise IndexFormatError(
                f"{len(premise_ids)} ids for {matrix.shape[0]} vector rows"
            )
        if len(set(premise_ids)) != len(premise_ids):
            raise IndexFormatError("duplicate premise ids")
        if matrix.size and matrix.shape[1] != encoder.dim:
            raise DimensionMismatchError(
                f"matrix dim {matrix.shape[1]} != encoder dim {encoder.dim}"
            )
        self.corpus = corpus
        self.premise_ids = premise_ids
        self.matrix = matrix
        self.encoder = encoder
        self._row_of = {pid: i for i, pid in enumerate(premise_ids)}

    def __len__(self) -> int:
        return len(self.premise_ids)

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def vector_of(self, premise_id: str) -> np.ndarray:
        row = self._row_of.get(premise_id)
        if row is None:
            raise UnknownIdError(f"premise {premise_id!r} not indexed")
        return self.matrix[row]

    @staticmethod
    def build(corpus: PremiseCorpus, encoder: Encoder) -> PremiseIndex:
        """Encode every corpus sentence in insertion order."""
        ids = list(corpus.entries)
        if not ids:
            raise EmptyCorpusError("corpus has no premises")
        matrix = np.stack([encoder.encode(corpus.entries[pid]) for pid in ids])
        return PremiseIndex(corpus, ids, matrix, encoder)

    @staticmethod
    def from_vectors(
        corpus: PremiseCorpus,
        vectors: dict[str, np.ndarray],
        query_encoder: Encoder,
    ) -> PremiseIndex:
        """Index externally supplied premise vectors; queries still go
        through ``query_encoder``, which must share the vector dimension."""
        ids = list(corpus.entries)
        if not ids:
            raise EmptyCorpusError("corpus has no premises")
        missing = [pid for pid in ids if pid not in vectors]
        if missing:
            raise MissingVectorError(
                f"{len(missing)} corpus ids lack vectors, first {missing[0]!r}"
            )
        matrix = np.stack([np.asarray(vectors[pid], dtype=np.float64) for pid in ids])
        return PremiseIndex(corpus, ids, matrix, query_encoder)


# --------------------------------------------------------------------------
# Scoring
# --------------------------------------------------------------------------


def score(query_vec: np.ndarray, premise_vec: np.ndarray) -> float:
    """Inner product; cosine similarity for unit vectors."""
    if query_vec.shape != premise_vec.shape:
        raise DimensionMismatchError(
            f"query dim {query_vec.shape} != premise dim {premise_vec.shape}"
        )
    return float(np.dot(query_vec, premise_vec))


def _all_scores(index: PremiseIndex, query_vec: np.ndarray) -> np.ndarray:
    if len(index) == 0:
        raise EmptyIndexError("index has no premises")
    if query_vec.shape[0] != index.matrix.shape[1]:
        raise DimensionMismatchError(
            f"query dim {query_vec.shape[0]} != index dim {index.matrix.shape[1]}"
        )
    return index.matrix @ query_vec


def distribution(query_vec: np.ndarray, index: PremiseIndex) -> list[RankedPremise]:
    """Full-corpus retrieval distribution: softmax over inner products,
    sorted by descending probability."""
    scores = _all_scores(index, query_vec)
    shifted = np.exp(scores - scores.max())
    probabilities = shifted / shifted.sum()
    order = np.argsort(-scores, kind="stable")
    return [
        RankedPremise(index.premise_ids[i], float(scores[i]), float(probabilities[i]))
        for i in map(int, order)
    ]


def top_k(
    query_vec: np.ndarray,
    index: PremiseIndex,
    k: int,
    exclude: set[str] | frozenset[str] = frozenset(),
) -> list[RankedPremise]:
    """The ``k`` best premises outside ``exclude``; fewer if the index runs
    out. Equal scores keep corpus insertion order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scores = _all_scores(index, query_vec)
    ranked: list[RankedPremise] = []
    for i in map(int, np.argsort(-scores, kind="stable")):
        premise_id = index.premise_ids[i]
        if premise_id in exclude:
            continue
        ranked.append(RankedPremise(premise_id, float(scores[i])))
        if len(ranked) == k:
            break
    return ranked


# --------------------------------------------------------------------------
# Conditional and iterative retrieval
# --------------------------------------------------------------------------


def _conditioned_query_vector(
    index: PremiseIndex,
    hypothesis: str,
    picked_texts: list[str],
    picked_vectors: list[np.ndarray],
    config: ConditionalConfig,
) -> np.ndarray:
    # The hypothesis always stays in the conditioning set; the cap drops the
    # oldest picks first.
    keep = picked_texts
    keep_vectors = picked_vectors
    if config.max_query_terms is not None:
        budget = config.max_query_terms - 1
        keep = picked_texts[len(picked_texts) - budget :] if budget > 0 else []
        keep_vectors = picked_vectors[len(picked_vectors) - budget :] if budget > 0 else []
    if config.query_mode == "average":
        stacked = np.stack([index.encoder.encode(hypothesis), *keep_vectors])
        mean = stacked.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        return mean / norm if norm else mean
    return index.encoder.encode(QUERY_SEPARATOR.join([hypothesis, *keep]))


def conditional_picks(
    hypothesis: str, index: PremiseIndex, config: ConditionalConfig
) -> list[RankedPremise]:
    if len(index) == 0:
        raise EmptyIndexError("index has no premises")
    if config.fetch_count > len(index):
        raise ExhaustedCorpusError(
            f"requested {config.fetch_count} premises from a corpus of {len(index)}"
        )
    picks: list[RankedPremise] = []
    picked_ids: set[str] = set()
    picked_texts: list[str] = []
    picked_vectors: list[np.ndarray] = []

    # Unconditioned phase: repeated argmax over the shrinking candidate set
    # under a fixed query is just the score-ordered prefix.
    plain = min(config.conditioning_split, config.fetch_count)
    if plain:
        for premise in top_k(index.encoder.encode(hypothesis), index, plain):
            picks.append(premise)
            picked_ids.add(premise.premise_id)

    for _ in range(plain, config.fetch_count):
        query_vec = _conditioned_query_vector(
            index, hypothesis, picked_texts, picked_vectors, config
        )
        (premise,) = top_k(query_vec, index, 1, exclude=picked_ids)
        picks.append(premise)
        picked_ids.add(premise.premise_id)
        picked_texts.append(index.corpus.entries[premise.premise_id])
        picked_vectors.append(index.vector_of(premise.premise_id))
    return picks


def conditional_retrieve(
    hypothesis: str, index: PremiseIndex, config: ConditionalConfig | None = None
) -> list[str]:
    """First-iteration retrieval conditioned on its own partial results.

    Returns exactly ``fetch_count`` premise ids in pick order; raises
    :class:`ExhaustedCorpusError` when the corpus is smaller than that.
    """
    return [
        p.premise_id
        for p in conditional_picks(hypothesis, index, config or ConditionalConfig())
    ]


def iterative_retrieve(
    hypothesis: str,
    previous_step_text: str | None,
    index: PremiseIndex,
    k: int,
    used: set[str] | frozenset[str] = frozenset(),
    conditional: ConditionalConfig | None = None,
) -> list[RankedPremise]:
    """Retrieval for one generation iteration.

    With a previous step this is a plain top-k search on the concatenated
    query; without one (the first iteration) it delegates to conditional
    retrieval with ``k`` as the fetch count.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if previous_step_text is None:
        config = replace(conditional or ConditionalConfig(), fetch_count=k)
        picks = conditional_picks(hypothesis, index, config)
        return [p for p in picks if p.premise_id not in used]
    query_vec = encode_query(index.encoder, hypothesis, previous_step_text)
    return top_k(query_vec, index, k, exclude=set(used))


# --------------------------------------------------------------------------
# Okapi BM25 baseline
# --------------------------------------------------------------------------

BM25_K1 = 1.2
BM25_B = 0.75


class Bm25Scorer:
    """Okapi BM25 over whitespace-lowercase tokens.

    Uses the non-negative idf variant ln(1 + (N - n + 0.5)/(n + 0.5)) so an
    exact duplicate of a corpus sentence can never be outranked through a
    negative contribution from a very common term.
    """

    def __init__(self, corpus: PremiseCorpus, k1: float = BM25_K1, b: float = BM25_B):
        if not corpus.entries:
            raise EmptyCorpusError("corpus has no premises")
        self.k1 = k1
        self.b = b
        self.premise_ids = list(corpus.entries)
        self._docs = [corpus.entries[pid].lower().split() for pid in self.premise_ids]
        self._lengths = np.array([len(d) for d in self._docs], dtype=np.float64)
        self.avg_doc_len = float(self._lengths.mean())
        self._doc_freq: dict[str, int] = {}
        for doc in self._docs:
            for term in set(doc):
                self._doc_freq[term] = self._doc_freq.get(term, 0) + 1
        self._n_docs = len(self._docs)

    def idf(self, term: str) -> float:
        n = self._doc_freq.get(term, 0)
        return log(1.0 + (self._n_docs - n + 0.5) / (n + 0.5))

    def score_document(self, query_terms: list[str], doc_index: int) -> float:
        doc = self._docs[doc_index]
        length = len(doc)
        total = 0.0
        for term in query_terms:
            tf = doc.count(term)
            if tf == 0:
                continue
            total += (
                self.idf(term)
                * tf
                * (self.k1 + 1.0)
                / (tf + self.k1 * (1.0 - self.b + self.b * length / self.avg_doc_len))
            )
        return total

    def search(self, query_text: str, k: int) -> list[RankedPremise]:
        if k < 1:
            raise ValueError("k must be at least 1")
        terms = query_text.lower().split()
        scores = np.array(
            [self.score_document(terms, i) for i in range(self._n_docs)]
        )
        order = np.argsort(-scores, kind="stable")[:k]
        return [
            RankedPremise(self.premise_ids[i], float(scores[i])) for i in map(int, order)
        ]


def bm25_search(query_text: str, corpus: PremiseCorpus, k: int) -> list[RankedPremise]:
    return Bm25Scorer(corpus).search(query_text, k)


# --------------------------------------------------------------------------
# Snapshots and ranking export
# --------------------------------------------------------------------------

_INDEX_CORPUS_FILE = "corpus.tsv"
_INDEX_VECTOR_FILE = "premises.vec"
_INDEX_CONFIG_FILE = "index.json"


def save_index(index: PremiseIndex, directory: str | Path) -> None:
    """Persist an index as corpus + vector file + encoder config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_corpus(directory / _INDEX_CORPUS_FILE, index.corpus)
    save_vectors(
        directory / _INDEX_VECTOR_FILE,
        {pid: index.matrix[i] for i, pid in enumerate(index.premise_ids)},
    )
    config = getattr(index.encoder, "config", None)
    payload = {
        "dim": index.dim,
        "count": len(index),
        "encoder": config() if callable(config) else {"type": "external"},
    }
    (directory / _INDEX_CONFIG_FILE).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_index(
    directory: str | Path, query_encoder: Encoder | None = None
) -> PremiseIndex:
    """Load a saved index; rebuilds the built-in encoder from the snapshot
    config unless a query encoder is given."""
    directory = Path(directory)
    corpus = load_corpus(directory / _INDEX_CORPUS_FILE)
    try:
        payload = json.loads((directory / _INDEX_CONFIG_FILE).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IndexFormatError(f"unreadable index config: {exc}") from exc
    if query_encoder is None:
        encoder_config = payload.get("encoder", {})
        if encoder_config.get("type") != "hashed-ngram":
            raise IndexFormatError(
                "snapshot lacks a built-in encoder config; pass query_encoder"
            )
        query_encoder = HashedNgramEncoder(
            dim=encoder_config["dim"],
            seed=encoder_config.get("seed", 0),
            ngram_range=tuple(encoder_config.get("ngram_range", (3, 5))),
        )
    vectors = load_vectors(
        directory / _INDEX_VECTOR_FILE, corpus, expect_dim=query_encoder.dim
    )
    return PremiseIndex.from_vectors(corpus, vectors, query_encoder)


def ranking_record(query_id: str, ranked: Iterable[RankedPremise]) -> dict:
    return {
        "query_id": query_id,
        "ranking": [{"id": p.premise_id, "score": p.score} for p in ranked],
    }


def write_rankings(path: str | Path, records: Iterable[dict]) -> None:
    """One JSON object per line, deterministic key order."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
