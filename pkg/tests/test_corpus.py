"""Corpus and dataset loading, deduplication, and statistics."""

import pytest

from irgr.corpus import (
    CorpusFormatError,
    PremiseCorpus,
    ProofParseError,
    compute_stats,
    load_corpus,
    load_dataset,
    save_corpus,
)
from irgr.util import dump_json


def _write_corpus(path, rows):
    path.write_text("".join(f"{pid}\t{text}\n" for pid, text in rows), encoding="utf-8")


# --------------------------------------------------------------------------
# Corpus I/O
# --------------------------------------------------------------------------


def test_load_corpus_keeps_insertion_order(tmp_path):
    path = tmp_path / "corpus.tsv"
    _write_corpus(path, [("b", "second sentence"), ("a", "first sentence")])
    corpus = load_corpus(path)
    assert list(corpus.entries) == ["b", "a"]
    assert corpus.text_of("a") == "first sentence"


def test_duplicate_sentences_merge_to_aliases(tmp_path):
    path = tmp_path / "corpus.tsv"
    _write_corpus(path, [("a", "Water is wet"), ("b", "water  is wet"), ("c", "sand is dry")])
    corpus = load_corpus(path)
    assert len(corpus) == 2
    assert corpus.resolve("b") == "a"
    assert "b" in corpus
    assert corpus.text_of("b") == "Water is wet"


def test_id_for_text_uses_normalization(toy_corpus):
    assert toy_corpus.id_for_text("  The CAT sat on the mat ") == "d1"
    assert toy_corpus.id_for_text("no such sentence") is None


def test_save_load_round_trip(tmp_path, toy_corpus):
    path = tmp_path / "corpus.tsv"
    save_corpus(path, toy_corpus)
    again = load_corpus(path)
    assert again.entries == toy_corpus.entries


def test_malformed_corpus_line_raises(tmp_path):
    path = tmp_path / "corpus.tsv"
    path.write_text("only-an-id-no-tab\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        load_corpus(path)


# --------------------------------------------------------------------------
# Dataset records
# --------------------------------------------------------------------------


def _record_row(record_id="Q1", proof="sent1 & sent2 -> hypothesis;"):
    return {
        "id": record_id,
        "hypothesis": "the sky appears blue",
        "question": "why does the sky appear blue?",
        "context": "sent1: sunlight contains all colors "
                   "sent2: air scatters blue light the most",
        "proof": proof,
    }


def test_load_dataset_parses_context_slots(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(dump_json(_record_row()) + "\n", encoding="utf-8")
    (record,) = load_dataset(path)
    assert record.id == "Q1"
    assert record.leaf_bindings["sent2"].text == "air scatters blue light the most"
    assert record.gold_tree().node_count() == 3


def test_load_dataset_resolves_corpus_ids(tmp_path):
    corpus = PremiseCorpus()
    corpus.add("fact-1", "sunlight contains all colors")
    path = tmp_path / "data.jsonl"
    path.write_text(dump_json(_record_row()) + "\n", encoding="utf-8")
    (record,) = load_dataset(path, corpus)
    assert record.leaf_bindings["sent1"].premise_id == "fact-1"
    assert record.leaf_bindings["sent2"].premise_id is None


def test_load_dataset_rejects_bad_proof(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(
        dump_json(_record_row(proof="sent1 & sent9 -> hypothesis;")) + "\n",
        encoding="utf-8",
    )
    with pytest.raises(ProofParseError):
        load_dataset(path)


def test_load_dataset_rejects_missing_fields(tmp_path):
    row = _record_row()
    del row["hypothesis"]
    path = tmp_path / "data.jsonl"
    path.write_text(dump_json(row) + "\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        load_dataset(path)


def test_load_dataset_accepts_directory_of_splits(tmp_path):
    for name in ("train.jsonl", "dev.jsonl"):
        (tmp_path / name).write_text(
            dump_json(_record_row(record_id=name)) + "\n", encoding="utf-8"
        )
    (tmp_path / "notes.txt").write_text("ignored", encoding="utf-8")
    records = load_dataset(tmp_path)
    assert {r.id for r in records} == {"train.jsonl", "dev.jsonl"}


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------


def test_compute_stats_counts_and_averages(tmp_path):
    rows = [
        _record_row("Q1"),
        _record_row("Q2", proof="sent1 -> int1: blue light scatters; "
                                "int1 & sent2 -> hypothesis;"),
    ]
    path = tmp_path / "data.jsonl"
    path.write_text("".join(dump_json(r) + "\n" for r in rows), encoding="utf-8")
    records = load_dataset(path)
    stats = compute_stats(records)
    assert stats.num_examples == 2
    assert stats.num_steps == 3
    # Trees have 3 and 4 nodes; steps 1 and 2.
    assert stats.avg_nodes_per_tree == 3.5
    assert stats.avg_steps_per_tree == 1.5


def test_release_statistics(release_dir, corpus):
    records = load_dataset(release_dir, corpus)
    stats = compute_stats(records, corpus)
    assert stats.num_examples == 1840
    assert stats.num_steps == 5881
    assert stats.corpus_size == len(corpus)
