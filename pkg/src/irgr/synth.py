"""Deterministic synthetic benchmark release for offline runs.

This module fabricates a complete explanation-benchmark release: a premise
corpus plus train/dev/test example files with gold entailment trees.  The
release is fully self-contained and reproducible from a seed, so every
pipeline stage can be exercised without downloading anything.

The generated data is shaped to mirror the real benchmark's headline
statistics (example, step, and node counts) and to make the retrieval
task meaningful: every tree's leaves share a private marker word that is
absent from its hypothesis, so single-query retrieval finds only the
surface-similar leaf while query conditioning can follow the marker to
the rest.  Each dev example additionally carries a ladder of paraphrase
distractors plus two marker-bearing bridge sentences placed, by
construction, just past the conditioning split of the default retriever
configuration.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import PremiseCorpus, save_corpus
from .trees import EntailmentStep, EntailmentTree, NodeRef, serialize
from .util import dump_json

# Examples per gold step count.  Sums to 1,840 examples and 5,881 steps.
STEP_COUNT_DISTRIBUTION: dict[int, int] = {
    1: 419,
    2: 501,
    3: 260,
    4: 210,
    5: 160,
    6: 120,
    7: 85,
    8: 50,
    9: 25,
    10: 10,
}

# Examples that get a third antecedent on their first step.  Together with
# the two-antecedent chains this lands the average tree size on target.
TERNARY_EXAMPLE_COUNT = 382

SPLIT_SIZES: dict[str, int] = {"train": 1313, "dev": 187, "test": 340}

# Per dev example: paraphrase distractors that pin the plain-similarity
# ranks ahead of the bridge sentences.
LADDER_SIZE = 13

DEFAULT_SEED = 7

_SYLLABLES = [c + v for c in "bcdfglmnprstvz" for v in "aeiou"]
_ADJECTIVE_POOL_SIZE = 40
# Words used by the sentence templates; pseudo-words must avoid them.
_RESERVED = {
    "the", "a", "is", "can", "if", "then", "each", "by", "near", "and",
    "kind", "of", "when", "it", "turns", "into", "become", "that",
    "comes", "out", "must", "keep", "because", "surely", "also", "true",
    "with",
}


class WordMint:
    """Dispenses pseudo-words, each unique across the whole release."""

    def __init__(self, rng: random.Random) -> None:
        self._rng = rng
        self._used: set[str] = set(_RESERVED)

    def word(self) -> str:
        while True:
            count = self._rng.randint(3, 4)
            candidate = "".join(
                self._rng.choice(_SYLLABLES) for _ in range(count)
            )
            if candidate not in self._used:
                self._used.add(candidate)
                return candidate

    def words(self, count: int) -> list[str]:
        return [self.word() for _ in range(count)]


@dataclass(frozen=True)
class ReleaseSummary:
    """What `generate_release` wrote, for logging and sanity checks."""

    out_dir: Path
    example_count: int
    step_count: int
    corpus_size: int
    split_counts: dict[str, int]

    def as_dict(self) -> dict:
        return {
            "example_count": self.example_count,
            "step_count": self.step_count,
            "corpus_size": self.corpus_size,
            "split_counts": dict(self.split_counts),
        }


def _step_counts() -> list[int]:
    counts: list[int] = []
    for steps, examples in sorted(STEP_COUNT_DISTRIBUTION.items()):
        counts.extend([steps] * examples)
    return counts


def _is_ternary(index: int, total: int) -> bool:
    # Bresenham spread: exactly TERNARY_EXAMPLE_COUNT marks, evenly spaced.
    quota = TERNARY_EXAMPLE_COUNT
    return (index * quota) // total != ((index + 1) * quota) // total


def _deal_splits(total: int) -> list[str]:
    """Assign each example index a split, keeping every step-count stratum
    represented in every split in proportion."""
    assigned = {name: 0 for name in SPLIT_SIZES}
    order = list(SPLIT_SIZES)
    dealt: list[str] = []
    for _ in range(total):
        name = max(
            order,
            key=lambda s: (SPLIT_SIZES[s] - assigned[s]) / SPLIT_SIZES[s],
        )
        assigned[name] += 1
        dealt.append(name)
    if assigned != SPLIT_SIZES:
        raise AssertionError(f"split dealing drifted: {assigned}")
    return dealt


@dataclass(frozen=True)
class _Lexicon:
    adjectives: list[str]


def _build_tree(
    step_count: int,
    ternary: bool,
    mint: WordMint,
    rng: random.Random,
    lexicon: _Lexicon,
) -> tuple[EntailmentTree, list[str], str, str]:
    """Construct one chain-shaped gold tree.

    Returns the tree, the leaf texts in slot order, the marker word, and
    the chain's base noun.  Every leaf ends
    with a tail built from the example's private marker word; the
    hypothesis does not mention the marker.  Only the final step's leaf
    repeats the hypothesis phrase, so plain similarity search sees one
    gold leaf while the others are reachable through the marker alone.
    """
    nouns = mint.words(step_count + 1)
    category = mint.word()
    target = mint.word()
    marker = mint.word()
    verb = mint.word()
    adjective = rng.choice(lexicon.adjectives)

    hypothesis = f"the {nouns[-1]} can {verb} a {target}"
    tail = f"near the {marker} and the {marker} by the {marker}"
    # Step-one leaves mention the marker once more and repeat the long
    # marker-plus-base-noun suffix of the paraphrase sentences, so
    # conditioned picks take them before the chain leaves and iterative
    # runs can always apply the first gold step.
    first_tail = f"with the {marker} {tail} of the {nouns[0]}"
    final_leaf = (
        f"if the {nouns[-2]} is {adjective} then the {nouns[-1]} "
        f"can {verb} a {target} {tail} of the {nouns[0]}"
    )
    base_leaf = f"the {nouns[0]} is a kind of {category} {first_tail}"
    extra_leaf = (
        f"a {category} must keep the {mint.word()} {first_tail}"
        if ternary
        else None
    )

    leaves: list[str] = []
    steps: list[EntailmentStep] = []

    def leaf_ref(text: str) -> NodeRef:
        leaves.append(text)
        return NodeRef.leaf(len(leaves))

    if step_count == 1:
        antecedents = [leaf_ref(final_leaf), leaf_ref(base_leaf)]
        if extra_leaf is not None:
            antecedents.append(leaf_ref(extra_leaf))
        steps.append(
            EntailmentStep(tuple(antecedents), NodeRef.hypothesis())
        )
    else:
        grow_leaf = f"each {category} can become a {nouns[1]} {first_tail}"
        antecedents = [leaf_ref(base_leaf), leaf_ref(grow_leaf)]
        if extra_leaf is not None:
            antecedents.append(leaf_ref(extra_leaf))
        steps.append(
            EntailmentStep(
                tuple(antecedents),
                NodeRef.intermediate(1),
                f"the {nouns[1]} comes out of the {nouns[0]}",
            )
        )
        for k in range(2, step_count):
            chain_leaf = f"a {nouns[k - 1]} turns into a {nouns[k]} {tail}"
            steps.append(
                EntailmentStep(
                    (NodeRef.intermediate(k - 1), leaf_ref(chain_leaf)),
                    NodeRef.intermediate(k),
                    f"the {nouns[k]} comes out of the {nouns[0]}",
                )
            )
        steps.append(
            EntailmentStep(
                (NodeRef.intermediate(step_count - 1), leaf_ref(final_leaf)),
                NodeRef.hypothesis(),
            )
        )

    tree = EntailmentTree(
        hypothesis_text=hypothesis,
        leaves={NodeRef.leaf(i + 1): text for i, text in enumerate(leaves)},
        intermediates={
            s.conclusion: s.conclusion_text or ""
            for s in steps
            if s.conclusion.is_intermediate
        },
        steps=tuple(steps),
    )
    return tree, leaves, marker, nouns[0]


def _dev_challenge_sentences(
    tree: EntailmentTree,
    marker: str,
    base_noun: str,
    rng: random.Random,
    lexicon: _Lexicon,
) -> tuple[list[str], list[str]]:
    """Distractor ladder plus two bridge sentences for one dev example.

    The ladder repeats the hypothesis phrase three times per sentence, so
    under the plain query its thirteen members outrank everything else.
    The bridges and the tree's own final leaf each carry the phrase once
    plus the marker tail, which puts exactly that trio on the next three
    ranks, in some order.  With the default retriever configuration the
    plain picks stop after fifteen, so the first conditioned pick is
    always one of the trio and seeds the marker into the growing query;
    the remaining gold leaves then outscore every foreign sentence.
    """
    hypothesis = tree.hypothesis_text
    tail = f"near the {marker} and the {marker} by the {marker}"

    ladder = [
        f"{hypothesis} because {hypothesis} and {hypothesis} when it is {adj}"
        for adj in rng.sample(lexicon.adjectives, LADDER_SIZE)
    ]
    bridges = [
        f"{hypothesis} {tail} of the {base_noun}",
        f"surely {hypothesis} also {tail} of the {base_noun}",
    ]
    return ladder, bridges


def generate_release(
    out_dir: str | Path, seed: int = DEFAULT_SEED
) -> ReleaseSummary:
    """Write corpus.tsv plus train/dev/test .jsonl files under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    mint = WordMint(rng)
    lexicon = _Lexicon(adjectives=mint.words(_ADJECTIVE_POOL_SIZE))

    step_counts = _step_counts()
    total = len(step_counts)
    splits = _deal_splits(total)

    corpus = PremiseCorpus()
    fact_counter = 0

    def add_fact(text: str) -> str:
        nonlocal fact_counter
        premise_id = f"fact-{fact_counter:05d}"
        fact_counter += 1
        corpus.add(premise_id, text)
        return premise_id

    records: dict[str, list[dict]] = {name: [] for name in SPLIT_SIZES}
    total_steps = 0
    for index, step_count in enumerate(step_counts):
        tree, leaf_texts, marker, base_noun = _build_tree(
            step_count, _is_ternary(index, total), mint, rng, lexicon
        )
        total_steps += len(tree.steps)
        split = splits[index]
        slots = [f"sent{i + 1}" for i in range(len(leaf_texts))]
        ids = [add_fact(text) for text in leaf_texts]
        if split == "dev":
            ladder, bridges = _dev_challenge_sentences(
                tree, marker, base_noun, rng, lexicon
            )
            for sentence in ladder + bridges:
                add_fact(sentence)
        record = {
            "id": f"SYNTH_{index:04d}",
            "hypothesis": tree.hypothesis_text,
            "question": f"is it true that {tree.hypothesis_text}?",
            "context": " ".join(
                f"{slot}: {text}" for slot, text in zip(slots, leaf_texts)
            ),
            "proof": serialize(tree),
            "meta": {
                "sentences": {
                    slot: {"text": text}
                    for slot, text in zip(slots, leaf_texts)
                },
                "sources": {
                    slot: {"uuid": premise_id}
                    for slot, premise_id in zip(slots, ids)
                },
            },
        }
        records[split].append(record)

    save_corpus(out / "corpus.tsv", corpus)
    for split, rows in records.items():
        path = out / f"{split}.jsonl"
        with path.open("w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(dump_json(row) + "\n")

    return ReleaseSummary(
        out_dir=out,
        example_count=total,
        step_count=total_steps,
        corpus_size=len(corpus),
        split_counts={name: len(rows) for name, rows in records.items()},
    )
