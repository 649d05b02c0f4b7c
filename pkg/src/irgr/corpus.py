"""Premise corpus and dataset loading.

Corpus files hold one premise per line, either tab-separated (``id<TAB>text``)
or as a JSON object (``{"id": ..., "text": ...}``); the format is
auto-detected. Datasets are record-per-line JSON; the field names default to
the bundled release layout and can be remapped via :class:`DatasetFields`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .trees import EntailmentTree, TreeError, parse_linearized
from .util import normalize_text

_CONTEXT_SENT_RE = re.compile(r"(sent[1-9]\d*):\s*")


class CorpusFormatError(Exception):
    """A corpus or dataset file row does not match the expected format."""


class ProofParseError(Exception):
    """A dataset record's gold proof failed to parse or validate."""

    def __init__(self, record_id: str, cause: Exception):
        self.record_id = record_id
        self.cause = cause
        super().__init__(f"record {record_id}: {cause}")


@dataclass
class PremiseCorpus:
    """Identifier -> sentence store; insertion order is retained.

    Exact-duplicate sentences (after lowercasing and whitespace collapse) are
    merged on load; ``aliases`` maps each dropped id to the id that kept the
    sentence.
    """

    entries: dict[str, str] = field(default_factory=dict)
    aliases: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, premise_id: str) -> bool:
        return premise_id in self.entries or premise_id in self.aliases

    def resolve(self, premise_id: str) -> str:
        """Map an id through the duplicate-merge aliases to its canonical id."""
        return self.aliases.get(premise_id, premise_id)

    def text_of(self, premise_id: str) -> str:
        return self.entries[self.resolve(premise_id)]

    def id_for_text(self, sentence: str) -> str | None:
        if not hasattr(self, "_by_norm"):
            # First id wins for a given normalized sentence.
            self._by_norm: dict[str, str] = {}
            for premise_id, text in self.entries.items():
                self._by_norm.setdefault(normalize_text(text), premise_id)
        return self._by_norm.get(normalize_text(sentence))

    def add(self, premise_id: str, sentence: str) -> bool:
        """Insert one premise; returns False when merged into an existing id."""
        if premise_id in self.entries or premise_id in self.aliases:
            raise CorpusFormatError(f"duplicate premise id {premise_id!r}")
        if not sentence.strip():
            raise CorpusFormatError(f"empty sentence for id {premise_id!r}")
        existing = self.id_for_text(sentence)
        if existing is not None:
            self.aliases[premise_id] = existing
            return False
        self.entries[premise_id] = sentence
        self._by_norm[normalize_text(sentence)] = premise_id
        return True


def load_corpus(path: str | Path) -> PremiseCorpus:
    """Load a premise corpus, merging duplicate sentences."""
    corpus = PremiseCorpus()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                if line.lstrip().startswith("{"):
                    row = json.loads(line)
                    premise_id, text = str(row["id"]), str(row["text"])
                else:
                    premise_id, text = line.split("\t", 1)
            except (ValueError, KeyError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: bad corpus row ({exc})")
            corpus.add(premise_id.strip(), text.strip())
    return corpus


def save_corpus(path: str | Path, corpus: PremiseCorpus) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for premise_id, text in corpus.entries.items():
            handle.write(f"{premise_id}\t{text}\n")


@dataclass(frozen=True)
class LeafBinding:
    """One context sentence of an example: its sentN slot, corpus identity
    (when known) and text. Premises absent from the corpus were added by the
    dataset annotators and carry no corpus id."""

    premise_id: str | None
    text: str
    annotator_added: bool = False


@dataclass(frozen=True)
class DatasetFields:
    """Field-name mapping for dataset records; defaults match the bundled
    release layout."""

    id: str = "id"
    hypothesis: str = "hypothesis"
    question: str = "question"
    proof: str = "proof"
    context: str = "context"
    meta: str = "meta"
    sentences: str = "sentences"
    sources: str = "sources"


@dataclass(frozen=True)
class ExampleRecord:
    id: str
    hypothesis: str
    gold_proof: str
    leaf_bindings: dict[str, LeafBinding]
    question: str | None = None

    def binding_texts(self) -> dict[str, str]:
        return {slot: b.text for slot, b in self.leaf_bindings.items()}

    def gold_tree(self, strict: bool = True) -> EntailmentTree:
        return parse_linearized(
            self.gold_proof, self.binding_texts(), self.hypothesis, strict=strict
        )


def _parse_context_string(context: str) -> dict[str, str]:
    """Split ``sent1: ... sent2: ...`` context strings into slot -> text."""
    parts = _CONTEXT_SENT_RE.split(context)
    # parts = [prefix, slot, text, slot, text, ...]
    bindings: dict[str, str] = {}
    for i in range(1, len(parts) - 1, 2):
        bindings[parts[i]] = parts[i + 1].strip()
    return bindings


def _record_bindings(
    row: dict, fields: DatasetFields, corpus: PremiseCorpus | None
) -> dict[str, LeafBinding]:
    meta = row.get(fields.meta) or {}
    sentences = meta.get(fields.sentences)
    if isinstance(sentences, dict) and sentences:
        texts = {
            slot: (t["text"] if isinstance(t, dict) else str(t)).strip()
            for slot, t in sentences.items()
        }
    else:
        texts = _parse_context_string(str(row.get(fields.context, "")))
    sources = meta.get(fields.sources) or {}

    bindings: dict[str, LeafBinding] = {}
    for slot, text in texts.items():
        premise_id = None
        source = sources.get(slot)
        if isinstance(source, dict):
            premise_id = source.get("uuid") or source.get("id")
        elif isinstance(source, str):
            premise_id = source
        if corpus is not None:
            if premise_id is not None and premise_id in corpus:
                premise_id = corpus.resolve(premise_id)
            else:
                premise_id = corpus.id_for_text(text)
            if premise_id is None:
                bindings[slot] = LeafBinding(None, text, annotator_added=True)
                continue
        bindings[slot] = LeafBinding(premise_id, text)
    return bindings


def _iter_dataset_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.jsonl")) or sorted(path.glob("*.json"))
        if not files:
            raise FileNotFoundError(f"no dataset files under {path}")
        return files
    return [path]


def load_dataset(
    path: str | Path,
    corpus: PremiseCorpus | None = None,
    fields: DatasetFields = DatasetFields(),
) -> list[ExampleRecord]:
    """Load dataset records; every gold proof must parse and validate.

    ``path`` may be a single record-per-line JSON file or a directory of
    split files (``*.jsonl``). Passing the corpus resolves each context
    sentence to its premise id and flags annotator-added premises.
    """
    records: list[ExampleRecord] = []
    for file in _iter_dataset_files(Path(path)):
        with open(file, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except ValueError as exc:
                    raise CorpusFormatError(f"{file}:{lineno}: bad JSON ({exc})")
                record_id = str(row.get(fields.id, f"{file.name}:{lineno}"))
                try:
                    hypothesis = str(row[fields.hypothesis]).strip()
                    proof = str(row[fields.proof]).strip()
                except KeyError as exc:
                    raise CorpusFormatError(
                        f"{file}:{lineno}: missing field {exc} in record {record_id}"
                    )
                bindings = _record_bindings(row, fields, corpus)
                record = ExampleRecord(
                    id=record_id,
                    hypothesis=hypothesis,
                    gold_proof=proof,
                    leaf_bindings=bindings,
                    question=row.get(fields.question),
                )
                try:
                    record.gold_tree()
                except TreeError as exc:
                    raise ProofParseError(record_id, exc)
                records.append(record)
    return records


@dataclass(frozen=True)
class DatasetStats:
    num_examples: int
    num_steps: int
    avg_nodes_per_tree: float
    avg_steps_per_tree: float
    corpus_size: int = 0

    def as_dict(self) -> dict:
        return {
            "num_examples": self.num_examples,
            "num_steps": self.num_steps,
            "avg_nodes_per_tree": self.avg_nodes_per_tree,
            "avg_steps_per_tree": self.avg_steps_per_tree,
            "corpus_size": self.corpus_size,
        }


def compute_stats(
    records: list[ExampleRecord], corpus: PremiseCorpus | None = None
) -> DatasetStats:
    """Exact example/step counts plus per-tree averages (1 decimal)."""
    num_steps = 0
    num_nodes = 0
    for record in records:
        tree = record.gold_tree()
        num_steps += len(tree.steps)
        num_nodes += tree.node_count()
    n = len(records)
    return DatasetStats(
        num_examples=n,
        num_steps=num_steps,
        avg_nodes_per_tree=round(num_nodes / n, 1) if n else 0.0,
        avg_steps_per_tree=round(num_steps / n, 1) if n else 0.0,
        corpus_size=len(corpus) if corpus is not None else 0,
    )
