"""Shared fixtures: the generated release, indexes over it, and small
hand-built examples."""

from __future__ import annotations

import pytest

from irgr.corpus import (
    ExampleRecord,
    LeafBinding,
    PremiseCorpus,
    load_corpus,
    load_dataset,
)
from irgr.encoding import HashedNgramEncoder
from irgr.retrieval import PremiseIndex
from irgr.synth import generate_release

NOTEBOOK_HYPOTHESIS = "notebook paper can be recycled many times"
NOTEBOOK_PROOF = (
    "sent2 & sent3 -> int1: notebook paper is recyclable; "
    "int1 & sent1 -> hypothesis;"
)
NOTEBOOK_SENTENCES = {
    "sent1": "recyclable means a material can be recycled / reused many times",
    "sent2": "paper is recyclable",
    "sent3": "notebook paper is a kind of paper",
}


@pytest.fixture
def notebook_record() -> ExampleRecord:
    return ExampleRecord(
        id="notebook",
        hypothesis=NOTEBOOK_HYPOTHESIS,
        gold_proof=NOTEBOOK_PROOF,
        leaf_bindings={
            slot: LeafBinding(None, text)
            for slot, text in NOTEBOOK_SENTENCES.items()
        },
    )


@pytest.fixture
def notebook_tree(notebook_record):
    return notebook_record.gold_tree()


@pytest.fixture
def toy_corpus() -> PremiseCorpus:
    corpus = PremiseCorpus()
    for premise_id, text in [
        ("d1", "the cat sat on the mat"),
        ("d2", "a dog chased the cat"),
        ("d3", "mats are made of woven fibers"),
        ("d4", "dogs and cats are common pets"),
        ("d5", "the fiber market grew quickly"),
    ]:
        corpus.add(premise_id, text)
    return corpus


@pytest.fixture(scope="session")
def release_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("release")
    generate_release(out)
    return out


@pytest.fixture(scope="session")
def corpus(release_dir) -> PremiseCorpus:
    return load_corpus(release_dir / "corpus.tsv")


@pytest.fixture(scope="session")
def dev_records(release_dir, corpus) -> list[ExampleRecord]:
    return load_dataset(release_dir / "dev.jsonl", corpus)


@pytest.fixture(scope="session")
def encoder() -> HashedNgramEncoder:
    return HashedNgramEncoder()


@pytest.fixture(scope="session")
def dev_index(corpus, encoder) -> PremiseIndex:
    return PremiseIndex.build(corpus, encoder)
