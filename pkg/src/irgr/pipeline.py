"""The retrieve-generate loop: build entailment trees one step at a time.

Each iteration retrieves premises (conditionally on the first pass, by
hypothesis-plus-previous-step afterwards), hands the context to a step
generator and folds the returned step back in. The loop ends when a step
concludes the hypothesis or when it provably cannot continue; every ending
is recorded as an explicit termination reason, never an exception.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Literal

from .corpus import ExampleRecord
from .encoding import compose_step_text, encode_query
from .generation import (
    EmptyContextError,
    GenerationContext,
    NoApplicableGoldStepError,
    OracleGenerator,
    ProtocolError,
    StepGenerator,
    TransportError,
    encode_input,
)
from .retrieval import (
    ConditionalConfig,
    PremiseIndex,
    conditional_picks,
    top_k,
)
from .trees import (
    EntailmentStep,
    EntailmentTree,
    NodeRef,
    ProofSyntaxError,
    build_tree,
    serialize_step,
)
from .util import dump_json

DEFAULT_MAX_STEPS = 10
DEFAULT_MIN_FETCH = 5


class Termination(enum.Enum):
    """Why a proof attempt stopped."""

    HYPOTHESIS_REACHED = "HypothesisReached"
    MAX_STEPS_EXCEEDED = "MaxStepsExceeded"
    GENERATOR_ERROR = "GeneratorError"
    REPETITION_DETECTED = "RepetitionDetected"
    STARVED = "Starved"


@dataclass(frozen=True)
class PipelineConfig:
    """Loop controls.

    ``retrieval_mode`` picks how the context is filled: "single" and
    "conditional" retrieve once before the first step (plain or conditional
    search), "iterative" keeps retrieving before every step. The per-step
    fetch size shrinks as premises get consumed, never below ``min_fetch``.
    """

    max_steps: int = DEFAULT_MAX_STEPS
    fetch_count: int = 25
    min_fetch: int = DEFAULT_MIN_FETCH
    retrieval_mode: Literal["single", "conditional", "iterative"] = "iterative"
    conditional: ConditionalConfig = field(default_factory=ConditionalConfig)
    char_budget: int = 2000
    use_gold_context: bool = False

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.fetch_count < 1 or self.min_fetch < 1:
            raise ValueError("fetch sizes must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    t: int
    retrieved: tuple[str, ...]
    encoded_input: str
    raw_output: str | None
    step: EntailmentStep | None
    note: str | None = None


@dataclass(frozen=True)
class ProofTrace:
    iterations: tuple[IterationRecord, ...]
    termination: Termination
    detail: str | None = None


@dataclass(frozen=True)
class ProofResult:
    tree: EntailmentTree | None
    steps: tuple[EntailmentStep, ...]
    proof_text: str
    bindings: dict[str, dict[str, str | None]]
    trace: ProofTrace

    @property
    def termination(self) -> Termination:
        return self.trace.termination

    @property
    def iteration_count(self) -> int:
        return len(self.trace.iterations)


def _is_repetition(step: EntailmentStep, earlier: list[EntailmentStep]) -> bool:
    # Same antecedent set and same conclusion sentence (case-insensitive)
    # counts as a repeat regardless of the intN number chosen.
    ants = frozenset(step.antecedents)
    text = (step.conclusion_text or "").casefold()
    return any(
        frozenset(prev.antecedents) == ants
        and (prev.conclusion_text or "").casefold() == text
        for prev in earlier
    )


def _fetch_size(config: PipelineConfig, consumed: int, pool: int) -> int:
    return min(max(config.min_fetch, config.fetch_count - consumed), pool)


def _retrieve_into(
    context: GenerationContext,
    index: PremiseIndex,
    config: PipelineConfig,
    t: int,
    previous_step_text: str | None,
) -> list[str]:
    """Fetch fresh premises for iteration ``t`` and add them to the
    context. Returns the ids added, in rank order."""
    used = context.seen_premise_ids()
    pool = len(index) - len(used)
    if pool <= 0:
        return []
    if t == 1:
        k = min(config.fetch_count, pool)
        if config.retrieval_mode == "single":
            ranked = top_k(index.encoder.encode(context.hypothesis), index, k)
            ids = [p.premise_id for p in ranked]
        else:
            conditional = replace(config.conditional, fetch_count=k)
            ids = [
                p.premise_id for p in conditional_picks(context.hypothesis, index, conditional)
            ]
    else:
        if config.retrieval_mode != "iterative":
            return []
        k = _fetch_size(config, len(context.consumed), pool)
        query_vec = encode_query(index.encoder, context.hypothesis, previous_step_text)
        ranked = top_k(query_vec, index, k, exclude=used)
        ids = [p.premise_id for p in ranked]
    context.add_premises([(pid, index.corpus.entries[pid]) for pid in ids])
    return ids


def prove(
    hypothesis: str,
    index: PremiseIndex | None,
    generator: StepGenerator,
    config: PipelineConfig | None = None,
    initial_premises: list[tuple[str | None, str]] | None = None,
) -> ProofResult:
    """Run the loop for one hypothesis.

    With ``initial_premises`` given (gold-context mode) the context starts
    from those sentences and retrieval is skipped entirely; otherwise an
    index is required.
    """
    config = config or PipelineConfig()
    if initial_premises is None and index is None:
        raise ValueError("an index is required unless initial premises are given")
    context = GenerationContext(hypothesis)
    if initial_premises is not None:
        context.add_premises(initial_premises)

    iterations: list[IterationRecord] = []
    applied: list[EntailmentStep] = []
    termination = Termination.MAX_STEPS_EXCEEDED
    detail: str | None = None
    previous_step_text: str | None = None

    for t in range(1, config.max_steps + 1):
        retrieved: tuple[str, ...] = ()
        if initial_premises is None:
            retrieved = tuple(
                _retrieve_into(context, index, config, t, previous_step_text)
            )
        encoded = encode_input(context, config.char_budget)
        try:
            step = generator.generate(context)
        except (NoApplicableGoldStepError, EmptyContextError) as exc:
            termination, detail = Termination.STARVED, str(exc)
            iterations.append(IterationRecord(t, retrieved, encoded, None, None, detail))
            break
        except ProtocolError as exc:
            termination, detail = Termination.GENERATOR_ERROR, str(exc)
            iterations.append(
                IterationRecord(t, retrieved, encoded, exc.raw_reply, None, detail)
            )
            break
        except (TransportError, ProofSyntaxError) as exc:
            termination, detail = Termination.GENERATOR_ERROR, str(exc)
            iterations.append(IterationRecord(t, retrieved, encoded, None, None, detail))
            break
        raw = getattr(generator, "last_raw_reply", None) or serialize_step(step)
        if _is_repetition(step, applied):
            termination, detail = Termination.REPETITION_DETECTED, serialize_step(step)
            iterations.append(IterationRecord(t, retrieved, encoded, raw, step, detail))
            break
        try:
            context.apply_step(step)
        except ProofSyntaxError as exc:
            termination, detail = Termination.GENERATOR_ERROR, str(exc)
            iterations.append(IterationRecord(t, retrieved, encoded, raw, step, detail))
            break
        applied.append(step)
        iterations.append(IterationRecord(t, retrieved, encoded, raw, step))
        if step.conclusion.is_hypothesis:
            termination = Termination.HYPOTHESIS_REACHED
            break
        previous_step_text = compose_step_text(
            (context.text_of(a) for a in step.antecedents), step.conclusion_text or ""
        )

    tree = (
        build_tree(hypothesis, applied, context.text_of, strict=False)
        if applied
        else None
    )
    bindings = {
        ref.token(): {"id": context.premise_ids[ref], "text": text}
        for ref, text in {**context.consumed, **context.available}.items()
    }
    return ProofResult(
        tree=tree,
        steps=tuple(applied),
        proof_text=" ".join(serialize_step(s) for s in applied),
        bindings=bindings,
        trace=ProofTrace(tuple(iterations), termination, detail),
    )


# --------------------------------------------------------------------------
# Batch runs
# --------------------------------------------------------------------------


def gold_premises(record: ExampleRecord) -> list[tuple[str | None, str]]:
    """The record's leaf sentences in slot order, as prove() initial
    premises."""
    slots = sorted(record.leaf_bindings, key=lambda s: NodeRef.parse(s).index or 0)
    return [
        (record.leaf_bindings[slot].premise_id, record.leaf_bindings[slot].text)
        for slot in slots
    ]


def oracle_factory(record: ExampleRecord) -> StepGenerator:
    return OracleGenerator.for_record(record)


def prediction_record(record: ExampleRecord, result: ProofResult) -> dict:
    payload = {
        "id": record.id,
        "proof": result.proof_text,
        "bindings": result.bindings,
        "termination": result.termination.value,
        "iterations": result.iteration_count,
    }
    retrieved = sorted({pid for it in result.trace.iterations for pid in it.retrieved})
    if retrieved:
        payload["retrieved"] = retrieved
    return payload


def run_batch(
    records: Iterable[ExampleRecord],
    index: PremiseIndex | None,
    generator_factory: Callable[[ExampleRecord], StepGenerator],
    config: PipelineConfig | None = None,
    out_path: str | Path | None = None,
    parallelism: int = 1,
    meta: dict | None = None,
) -> list[dict]:
    """Prove every record and optionally write a predictions file.

    The file starts with one meta line, then one JSON record per example in
    id order, the same bytes regardless of ``parallelism``.
    """
    config = config or PipelineConfig()
    ordered = sorted(records, key=lambda r: r.id)

    def run_one(record: ExampleRecord) -> dict:
        result = prove(
            record.hypothesis,
            index,
            generator_factory(record),
            config,
            initial_premises=gold_premises(record) if config.use_gold_context else None,
        )
        return prediction_record(record, result)

    if parallelism > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            predictions = list(pool.map(run_one, ordered))
    else:
        predictions = [run_one(record) for record in ordered]

    if out_path is not None:
        write_predictions(out_path, predictions, meta or {})
    return predictions


def write_predictions(path: str | Path, predictions: list[dict], meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dump_json({"meta": meta}) + "\n")
        for record in predictions:
            handle.write(dump_json(record) + "\n")


def read_predictions(path: str | Path) -> tuple[dict, list[dict]]:
    """Read a predictions file back into (meta, records)."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty predictions file")
    head = json.loads(lines[0])
    if "meta" not in head:
        raise ValueError(f"{path}: first line is not a meta header")
    return head["meta"], [json.loads(line) for line in lines[1:]]
