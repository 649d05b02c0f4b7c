"""Scoring retrieved premises and generated entailment trees.

Retrieval is scored with recall against gold leaf premises. Trees are
scored along three dimensions (leaves, steps, intermediate conclusions)
after aligning predicted intermediates to gold ones by the Jaccard overlap
of the leaf sets they cover; the overall bit demands perfection on all
three at once. Degenerate or unparseable predictions score zero rather
than erroring.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from statistics import mean
from typing import Iterable, Protocol, Sequence

from .corpus import ExampleRecord
from .trees import EntailmentTree, NodeRef, TreeError, parse_linearized, node_depth
from .util import identity_key, ngrams, tokenize

DEFAULT_SIMILARITY_THRESHOLD = 0.5


class EmptyGoldError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


# --------------------------------------------------------------------------
# Retrieval metrics
# --------------------------------------------------------------------------


def recall_at_k(retrieved: Iterable[str], gold: Iterable[str]) -> float:
    """|retrieved ∩ gold| / |gold|."""
    gold_set = set(gold)
    if not gold_set:
        raise EmptyGoldError("gold premise set is empty")
    return len(set(retrieved) & gold_set) / len(gold_set)


def retrieval_all_correct(retrieved: Iterable[str], gold: Iterable[str]) -> int:
    gold_set = set(gold)
    if not gold_set:
        raise EmptyGoldError("gold premise set is empty")
    return int(gold_set <= set(retrieved))


# --------------------------------------------------------------------------
# Similarity scorers
# --------------------------------------------------------------------------


class SimilarityScorer(Protocol):
    def __call__(self, left: str, right: str) -> float: ...


class TokenF1Scorer:
    """Token-level F1 over lowercased whitespace tokens.

    Deterministic, dependency-free default; learned similarity models can be
    plugged in through the same callable contract with their own threshold.
    """

    def __call__(self, left: str, right: str) -> float:
        left_counts = Counter(tokenize(left))
        right_counts = Counter(tokenize(right))
        overlap = sum((left_counts & right_counts).values())
        if overlap == 0:
            return 0.0
        precision = overlap / sum(left_counts.values())
        recall = overlap / sum(right_counts.values())
        return 2 * precision * recall / (precision + recall)


# --------------------------------------------------------------------------
# Alignment
# --------------------------------------------------------------------------

LeafIdentities = dict[NodeRef, str | None]


def _leaf_keys(tree: EntailmentTree, leaf_ids: LeafIdentities | None) -> dict[NodeRef, str]:
    leaf_ids = leaf_ids or {}
    return {
        ref: identity_key(leaf_ids.get(ref), text) for ref, text in tree.leaves.items()
    }


def _cover_sets(
    tree: EntailmentTree, leaf_keys: dict[NodeRef, str]
) -> dict[NodeRef, frozenset[str]]:
    """For every concluded node, the set of leaf sentences below it."""
    cover: dict[NodeRef, frozenset[str]] = {}
    for step in tree.steps:
        gathered: set[str] = set()
        for ant in step.antecedents:
            if ant.is_leaf:
                if ant in leaf_keys:
                    gathered.add(leaf_keys[ant])
            else:
                gathered |= cover.get(ant, frozenset())
        cover[step.conclusion] = frozenset(gathered)
    return cover


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def align(
    predicted: EntailmentTree,
    gold: EntailmentTree,
    predicted_leaf_ids: LeafIdentities | None = None,
    gold_leaf_ids: LeafIdentities | None = None,
) -> dict[NodeRef, NodeRef | None]:
    """Map each predicted intermediate to its best-covering gold node.

    Candidates are scanned in gold definition order and only a strictly
    better Jaccard score displaces the incumbent, so ties go to the earliest
    gold node. Zero overlap maps to None. The roots are paired
    unconditionally.
    """
    pred_cover = _cover_sets(predicted, _leaf_keys(predicted, predicted_leaf_ids))
    gold_cover = _cover_sets(gold, _leaf_keys(gold, gold_leaf_ids))
    gold_order = [step.conclusion for step in gold.steps]

    alignment: dict[NodeRef, NodeRef | None] = {}
    for ref in (s.conclusion for s in predicted.steps):
        if ref.is_hypothesis:
            continue
        best: NodeRef | None = None
        best_score = 0.0
        for candidate in gold_order:
            jaccard = _jaccard(pred_cover.get(ref, frozenset()), gold_cover[candidate])
            if jaccard > best_score:
                best, best_score = candidate, jaccard
        alignment[ref] = best
    if any(s.conclusion.is_hypothesis for s in predicted.steps):
        alignment[NodeRef.hypothesis()] = NodeRef.hypothesis()
    return alignment


# --------------------------------------------------------------------------
# Tree dimension scores
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DimensionScore:
    f1: float
    all_correct: int


def _f1(correct: int, predicted_total: int, gold_total: int) -> DimensionScore:
    if predicted_total == 0 and gold_total == 0:
        return DimensionScore(1.0, 1)
    if correct == 0:
        return DimensionScore(0.0, 0)
    precision = correct / predicted_total
    recall = correct / gold_total
    return DimensionScore(
        2 * precision * recall / (precision + recall),
        int(correct == predicted_total == gold_total),
    )


def leaf_scores(
    predicted: EntailmentTree,
    gold: EntailmentTree,
    predicted_leaf_ids: LeafIdentities | None = None,
    gold_leaf_ids: LeafIdentities | None = None,
) -> DimensionScore:
    """Set F1 between predicted and gold leaf premises."""
    predicted_set = set(_leaf_keys(predicted, predicted_leaf_ids).values())
    gold_set = set(_leaf_keys(gold, gold_leaf_ids).values())
    return _f1(len(predicted_set & gold_set), len(predicted_set), len(gold_set))


def step_scores(
    predicted: EntailmentTree,
    gold: EntailmentTree,
    alignment: dict[NodeRef, NodeRef | None],
    predicted_leaf_ids: LeafIdentities | None = None,
    gold_leaf_ids: LeafIdentities | None = None,
) -> DimensionScore:
    """A predicted step is correct iff the gold step concluding its aligned
    node has the same antecedent set once leaves are matched by identity and
    intermediates through the alignment. Each gold step matches at most
    once."""
    pred_keys = _leaf_keys(predicted, predicted_leaf_ids)
    gold_keys = _leaf_keys(gold, gold_leaf_ids)

    def gold_antecedents(step) -> frozenset:
        return frozenset(
            gold_keys.get(a, f"?{a.token()}") if a.is_leaf else ("node", a)
            for a in step.antecedents
        )

    gold_by_conclusion = {}
    for step in gold.steps:
        gold_by_conclusion.setdefault(step.conclusion, step)

    claimed: set[NodeRef] = set()
    correct = 0
    for step in predicted.steps:
        target = alignment.get(step.conclusion)
        if target is None or target in claimed or target not in gold_by_conclusion:
            continue
        mapped = set()
        for ant in step.antecedents:
            if ant.is_leaf:
                mapped.add(pred_keys.get(ant, f"?{ant.token()}"))
            else:
                aligned = alignment.get(ant)
                mapped.add(("node", aligned) if aligned is not None else ("blank", ant))
        if mapped == gold_antecedents(gold_by_conclusion[target]):
            claimed.add(target)
            correct += 1
    return _f1(correct, len(predicted.steps), len(gold.steps))


def intermediate_scores(
    predicted: EntailmentTree,
    gold: EntailmentTree,
    alignment: dict[NodeRef, NodeRef | None],
    scorer: SimilarityScorer | None = None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> DimensionScore:
    """Text similarity of predicted intermediate conclusions against the
    gold intermediates they aligned to; a pair counts when its score clears
    the threshold."""
    scorer = scorer or TokenF1Scorer()
    claimed: set[NodeRef] = set()
    correct = 0
    predicted_ints = [r for r in (s.conclusion for s in predicted.steps) if r.is_intermediate]
    for ref in predicted_ints:
        target = alignment.get(ref)
        if target is None or not target.is_intermediate or target in claimed:
            continue
        if scorer(predicted.intermediates[ref], gold.intermediates[target]) > threshold:
            claimed.add(target)
            correct += 1
    return _f1(correct, len(predicted_ints), len(gold.intermediates))


def overall_all_correct(
    leaves: DimensionScore, steps: DimensionScore, intermediates: DimensionScore
) -> int:
    return leaves.all_correct * steps.all_correct * intermediates.all_correct


# --------------------------------------------------------------------------
# Whole-example and whole-run evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExampleEvaluation:
    example_id: str
    gold_step_count: int
    leaves: DimensionScore
    steps: DimensionScore
    intermediates: DimensionScore
    overall: int
    parsed: bool

    def as_dict(self) -> dict:
        return {
            "id": self.example_id,
            "gold_steps": self.gold_step_count,
            "leaves": {"f1": self.leaves.f1, "all_correct": self.leaves.all_correct},
            "steps": {"f1": self.steps.f1, "all_correct": self.steps.all_correct},
            "intermediates": {
                "f1": self.intermediates.f1,
                "all_correct": self.intermediates.all_correct,
            },
            "overall_all_correct": self.overall,
            "parsed": self.parsed,
        }


def _zero_evaluation(record: ExampleRecord, gold: EntailmentTree) -> ExampleEvaluation:
    zero = DimensionScore(0.0, 0)
    return ExampleEvaluation(record.id, len(gold.steps), zero, zero, zero, 0, False)


def _binding_identities(bindings: dict[str, dict]) -> tuple[dict[str, str], LeafIdentities]:
    texts: dict[str, str] = {}
    ids: LeafIdentities = {}
    for token, entry in bindings.items():
        texts[token] = entry["text"]
        ids[NodeRef.parse(token)] = entry.get("id")
    return texts, ids


def evaluate_example(
    record: ExampleRecord,
    proof_text: str,
    bindings: dict[str, dict],
    scorer: SimilarityScorer | None = None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> ExampleEvaluation:
    """Score one predicted proof against the record's gold tree.

    ``bindings`` maps each sentN token of the proof to {"id", "text"}.
    Predictions that do not parse into any tree structure score zero across
    the board."""
    gold = record.gold_tree()
    gold_ids: LeafIdentities = {
        NodeRef.parse(slot): binding.premise_id
        for slot, binding in record.leaf_bindings.items()
    }
    try:
        texts, predicted_ids = _binding_identities(bindings)
        predicted = parse_linearized(proof_text, texts, record.hypothesis, strict=False)
    except (TreeError, KeyError, ValueError):
        return _zero_evaluation(record, gold)

    alignment = align(predicted, gold, predicted_ids, gold_ids)
    leaves = leaf_scores(predicted, gold, predicted_ids, gold_ids)
    steps = step_scores(predicted, gold, alignment, predicted_ids, gold_ids)
    intermediates = intermediate_scores(predicted, gold, alignment, scorer, threshold)
    return ExampleEvaluation(
        record.id,
        len(gold.steps),
        leaves,
        steps,
        intermediates,
        overall_all_correct(leaves, steps, intermediates),
        True,
    )


@dataclass(frozen=True)
class MetricSummary:
    f1: float
    all_correct: float


@dataclass(frozen=True)
class EvalReport:
    examples: tuple[ExampleEvaluation, ...]
    leaves: MetricSummary
    steps: MetricSummary
    intermediates: MetricSummary
    overall_all_correct: float
    breakdown: dict[int, dict[str, float]] = field(default_factory=dict)
    retrieval: dict[str, float] | None = None
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        payload = {
            "examples": [e.as_dict() for e in self.examples],
            "leaves": {"f1": self.leaves.f1, "all_correct": self.leaves.all_correct},
            "steps": {"f1": self.steps.f1, "all_correct": self.steps.all_correct},
            "intermediates": {
                "f1": self.intermediates.f1,
                "all_correct": self.intermediates.all_correct,
            },
            "overall_all_correct": self.overall_all_correct,
            "breakdown_by_steps": {str(k): v for k, v in sorted(self.breakdown.items())},
            "config": self.config,
        }
        if self.retrieval is not None:
            payload["retrieval"] = self.retrieval
        return payload

    def render_table(self) -> str:
        """Fixed-width table: one row per aggregate plus step-count rows."""
        header_1 = f"{'':<16}{'Leaves':<16}{'Steps':<16}{'Intermediates':<16}{'Overall':<8}"
        header_2 = (
            f"{'':<16}{'F1':<8}{'AllCor':<8}{'F1':<8}{'AllCor':<8}"
            f"{'F1':<8}{'AllCor':<8}{'AllCor':<8}"
        )

        def row(label: str, values: Sequence[float]) -> str:
            cells = "".join(f"{v:<8.3f}" for v in values)
            return f"{label:<16}{cells}"

        lines = [header_1, header_2]
        lines.append(
            row(
                f"all (n={len(self.examples)})",
                [
                    self.leaves.f1,
                    self.leaves.all_correct,
                    self.steps.f1,
                    self.steps.all_correct,
                    self.intermediates.f1,
                    self.intermediates.all_correct,
                    self.overall_all_correct,
                ],
            )
        )
        for count in sorted(self.breakdown):
            b = self.breakdown[count]
            lines.append(
                row(
                    f"steps={count} (n={int(b['count'])})",
                    [
                        b["leaves_f1"],
                        b["leaves_all_correct"],
                        b["steps_f1"],
                        b["steps_all_correct"],
                        b["intermediates_f1"],
                        b["intermediates_all_correct"],
                        b["overall_all_correct"],
                    ],
                )
            )
        if self.retrieval is not None:
            lines.append("")
            lines.append(
                f"retrieval: recall={self.retrieval['recall']:.3f} "
                f"all_correct={self.retrieval['all_correct']:.3f}"
            )
        return "\n".join(lines)


def breakdown_by_steps(
    examples: Sequence[ExampleEvaluation],
) -> dict[int, dict[str, float]]:
    """Mean metrics grouped by gold step count; empty buckets never appear."""
    if not examples:
        raise EmptyInputError("no examples to break down")
    buckets: dict[int, list[ExampleEvaluation]] = {}
    for example in examples:
        buckets.setdefault(example.gold_step_count, []).append(example)
    table: dict[int, dict[str, float]] = {}
    for count, members in sorted(buckets.items()):
        table[count] = {
            "count": float(len(members)),
            "leaves_f1": mean(e.leaves.f1 for e in members),
            "leaves_all_correct": mean(e.leaves.all_correct for e in members),
            "steps_f1": mean(e.steps.f1 for e in members),
            "steps_all_correct": mean(e.steps.all_correct for e in members),
            "intermediates_f1": mean(e.intermediates.f1 for e in members),
            "intermediates_all_correct": mean(e.intermediates.all_correct for e in members),
            "overall_all_correct": mean(e.overall for e in members),
        }
    return table


def evaluate(
    records: Sequence[ExampleRecord],
    predictions: dict[str, dict],
    scorer: SimilarityScorer | None = None,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    config: dict | None = None,
) -> EvalReport:
    """Score a prediction set against its dataset.

    ``predictions`` maps example id to a record with at least "proof" and
    "bindings"; examples without a prediction score zero. When prediction
    records carry "retrieved" id lists, retrieval recall over gold premise
    ids is reported alongside.
    """
    if not records:
        raise EmptyInputError("no records to evaluate")
    rows: list[ExampleEvaluation] = []
    recalls: list[float] = []
    retrieval_correct: list[int] = []
    for record in records:
        prediction = predictions.get(record.id)
        if prediction is None:
            rows.append(_zero_evaluation(record, record.gold_tree()))
            continue
        rows.append(
            evaluate_example(
                record,
                prediction.get("proof", ""),
                prediction.get("bindings", {}),
                scorer,
                threshold,
            )
        )
        if "retrieved" in prediction:
            gold_ids = {
                identity_key(b.premise_id, b.text)
                for b in record.leaf_bindings.values()
            }
            recalls.append(recall_at_k(prediction["retrieved"], gold_ids))
            retrieval_correct.append(
                retrieval_all_correct(prediction["retrieved"], gold_ids)
            )

    report = EvalReport(
        examples=tuple(rows),
        leaves=MetricSummary(
            mean(r.leaves.f1 for r in rows), mean(r.leaves.all_correct for r in rows)
        ),
        steps=MetricSummary(
            mean(r.steps.f1 for r in rows), mean(r.steps.all_correct for r in rows)
        ),
        intermediates=MetricSummary(
            mean(r.intermediates.f1 for r in rows),
            mean(r.intermediates.all_correct for r in rows),
        ),
        overall_all_correct=mean(r.overall for r in rows),
        breakdown=breakdown_by_steps(rows),
        retrieval=(
            {"recall": mean(recalls), "all_correct": mean(retrieval_correct)}
            if recalls
            else None
        ),
        config=config or {"scorer": "token-f1", "threshold": threshold},
    )
    return report


# --------------------------------------------------------------------------
# Retrieval error analysis
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RetrievalErrorStats:
    """Lexical-overlap and depth statistics for retrieved vs missed gold
    leaves."""

    true_positive_count: int
    false_negative_count: int
    tp_unigram_overlap: float | None
    fn_unigram_overlap: float | None
    tp_bigram_overlap: float | None
    fn_bigram_overlap: float | None
    tp_mean_depth: float | None
    fn_mean_depth: float | None

    def as_dict(self) -> dict:
        return {
            "true_positives": self.true_positive_count,
            "false_negatives": self.false_negative_count,
            "tp_unigram_overlap": self.tp_unigram_overlap,
            "fn_unigram_overlap": self.fn_unigram_overlap,
            "tp_bigram_overlap": self.tp_bigram_overlap,
            "fn_bigram_overlap": self.fn_bigram_overlap,
            "tp_mean_depth": self.tp_mean_depth,
            "fn_mean_depth": self.fn_mean_depth,
        }


def retrieval_error_stats(
    items: Sequence[tuple[ExampleRecord, set[str]]],
) -> RetrievalErrorStats:
    """Split gold leaves into retrieved (true positive) and missed (false
    negative) groups and compare their hypothesis overlap and tree depth."""
    if not items:
        raise EmptyInputError("no examples")
    groups: dict[bool, list[tuple[float, float, float]]] = {True: [], False: []}
    for record, retrieved in items:
        tree = record.gold_tree()
        hyp_tokens = tokenize(record.hypothesis)
        hyp_unigrams = set(hyp_tokens)
        hyp_bigrams = ngrams(hyp_tokens, 2)
        for slot, binding in record.leaf_bindings.items():
            hit = binding.premise_id is not None and binding.premise_id in retrieved
            tokens = tokenize(binding.text)
            unigram_overlap = len(set(tokens) & hyp_unigrams)
            bigram_overlap = len(ngrams(tokens, 2) & hyp_bigrams)
            depth = node_depth(tree, NodeRef.parse(slot))
            groups[hit].append((unigram_overlap, bigram_overlap, float(depth)))
    if not groups[True] and not groups[False]:
        raise EmptyInputError("no gold leaves")

    def summarize(rows: list[tuple[float, float, float]], column: int) -> float | None:
        return mean(row[column] for row in rows) if rows else None

    return RetrievalErrorStats(
        true_positive_count=len(groups[True]),
        false_negative_count=len(groups[False]),
        tp_unigram_overlap=summarize(groups[True], 0),
        fn_unigram_overlap=summarize(groups[False], 0),
        tp_bigram_overlap=summarize(groups[True], 1),
        fn_bigram_overlap=summarize(groups[False], 1),
        tp_mean_depth=summarize(groups[True], 2),
        fn_mean_depth=summarize(groups[False], 2),
    )
