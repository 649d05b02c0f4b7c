"""Generation contexts and single-step generators.

A context holds the hypothesis, the premises currently visible to the
generator (numbered sentN in retrieval-rank order) and the steps produced so
far. Premises used by a step leave the context and their numbers are never
reassigned. Three generators share one contract: oracle replay of gold
trees, a deterministic similarity-pairing template, and a client for an
out-of-process model speaking the plain-text step protocol.
"""

from __future__ import annotations

import socket
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .corpus import ExampleRecord
from .encoding import Encoder
from .trees import (
    EntailmentStep,
    EntailmentTree,
    NodeRef,
    ProofSyntaxError,
    parse_steps,
    serialize_step,
)
from .util import identity_key

DEFAULT_CHAR_BUDGET = 2000
DEFAULT_TIMEOUT_SECONDS = 30.0
STEP_ENDPOINT_PATH = "/step"


class MultipleStepsError(ProofSyntaxError):
    """Generator reply contained more than one clause."""


class UnknownRefError(ProofSyntaxError):
    """A step references a node that is not in the context."""


class StaleConclusionError(ProofSyntaxError):
    """A step re-concludes an intermediate that already exists."""


class NoApplicableGoldStepError(Exception):
    """No remaining gold step has all its antecedents available."""


class EmptyContextError(Exception):
    pass


class TransportError(Exception):
    """The generator service could not be reached or replied abnormally."""


class ProtocolError(Exception):
    """The generator service replied with unparseable content."""

    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


class GeneratorTimeoutError(TransportError):
    pass


@dataclass
class GenerationContext:
    """Mutable working state for one proof.

    ``available`` maps visible sentN refs to sentences in retrieval-rank
    order; ``premise_ids`` remembers which corpus premise each ref came from
    (None for sentences without a corpus identity). Numbers for both sentN
    and intN grow monotonically and are never reused.
    """

    hypothesis: str
    available: dict[NodeRef, str] = field(default_factory=dict)
    premise_ids: dict[NodeRef, str | None] = field(default_factory=dict)
    history: list[EntailmentStep] = field(default_factory=list)
    intermediates: dict[NodeRef, str] = field(default_factory=dict)
    consumed: dict[NodeRef, str] = field(default_factory=dict)
    next_sent_number: int = 1
    next_int_number: int = 1

    def __post_init__(self) -> None:
        if not self.hypothesis or not self.hypothesis.strip():
            raise ValueError("hypothesis must be non-empty")

    def seen_premise_ids(self) -> set[str]:
        return {pid for pid in self.premise_ids.values() if pid is not None}

    def add_premises(self, premises: list[tuple[str | None, str]]) -> list[NodeRef]:
        """Append (premise_id, sentence) pairs under fresh sentN refs,
        skipping corpus ids that already entered this context."""
        seen = self.seen_premise_ids()
        added: list[NodeRef] = []
        for premise_id, text in premises:
            if premise_id is not None and premise_id in seen:
                continue
            ref = NodeRef.leaf(self.next_sent_number)
            self.next_sent_number += 1
            self.available[ref] = text
            self.premise_ids[ref] = premise_id
            if premise_id is not None:
                seen.add(premise_id)
            added.append(ref)
        return added

    def fresh_intermediate(self) -> NodeRef:
        return NodeRef.intermediate(self.next_int_number)

    def text_of(self, ref: NodeRef) -> str:
        if ref.is_hypothesis:
            return self.hypothesis
        for table in (self.available, self.consumed, self.intermediates):
            if ref in table:
                return table[ref]
        raise UnknownRefError(f"{ref.token()} not in context")

    def usable_nodes(self) -> list[tuple[NodeRef, str]]:
        """Nodes a next step may consume: visible premises plus
        intermediates not yet used as an antecedent."""
        used = {a for step in self.history for a in step.antecedents}
        nodes = list(self.available.items())
        nodes.extend(
            (ref, text) for ref, text in self.intermediates.items() if ref not in used
        )
        return nodes

    def apply_step(self, step: EntailmentStep) -> None:
        """Consume the step's premises and record its conclusion."""
        for ref in step.antecedents:
            if ref.is_leaf:
                if ref not in self.available:
                    raise UnknownRefError(f"{ref.token()} not available")
            elif ref not in self.intermediates:
                raise UnknownRefError(f"{ref.token()} never concluded")
        if not step.conclusion.is_hypothesis:
            if step.conclusion in self.intermediates:
                raise StaleConclusionError(
                    f"{step.conclusion.token()} already concluded"
                )
            self.intermediates[step.conclusion] = step.conclusion_text or ""
            self.next_int_number = max(
                self.next_int_number, (step.conclusion.index or 0) + 1
            )
        for ref in step.antecedents:
            if ref.is_leaf:
                self.consumed[ref] = self.available.pop(ref)
        self.history.append(step)


def encode_input(context: GenerationContext, char_budget: int = DEFAULT_CHAR_BUDGET) -> str:
    """Render a context for the generator.

    Layout: ``hypothesis: <h>;`` then the visible premises as ``sentN:
    <text>`` joined by single spaces with one trailing semicolon, then each
    history step as a full clause. Over-budget contexts drop their
    lowest-ranked premises from the rendering only.
    """
    entries = list(context.available.items())

    def render(n_premises: int) -> str:
        parts = [f"hypothesis: {context.hypothesis};"]
        if n_premises:
            parts.append(
                " ".join(f"{ref.token()}: {text}" for ref, text in entries[:n_premises])
                + ";"
            )
        parts.extend(serialize_step(step) for step in context.history)
        return " ".join(parts)

    keep = len(entries)
    encoded = render(keep)
    while len(encoded) > char_budget and keep > 0:
        keep -= 1
        encoded = render(keep)
    return encoded


def parse_step(text: str, context: GenerationContext) -> EntailmentStep:
    """Parse exactly one clause and check it against the context.

    Antecedents must be visible premises or previously concluded
    intermediates; the conclusion must be the hypothesis or a fresh intN.
    """
    steps = parse_steps(text)
    if not steps:
        raise ProofSyntaxError(f"no step found in {text!r}")
    if len(steps) > 1:
        raise MultipleStepsError(f"expected one step, found {len(steps)}")
    step = steps[0]
    for ref in step.antecedents:
        if ref.is_leaf and ref not in context.available:
            raise UnknownRefError(f"{ref.token()} not among available premises")
        if ref.is_intermediate and ref not in context.intermediates:
            raise UnknownRefError(f"{ref.token()} was never concluded")
    if not step.conclusion.is_hypothesis and step.conclusion in context.intermediates:
        raise StaleConclusionError(f"{step.conclusion.token()} already concluded")
    return step


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------


class StepGenerator(Protocol):
    def generate(self, context: GenerationContext) -> EntailmentStep: ...


class OracleGenerator:
    """Replays the gold steps of one example against whatever premises the
    context managed to retrieve.

    Gold leaves are matched to context premises by corpus id where bound,
    by normalized sentence text otherwise. Each call emits the first
    not-yet-replayed gold step whose antecedents are all present.
    """

    def __init__(self, gold_tree: EntailmentTree, leaf_identities: dict[NodeRef, str]):
        missing = [r for r in gold_tree.leaves if r not in leaf_identities]
        if missing:
            raise ValueError(f"no identity for gold leaves {missing}")
        self.gold_tree = gold_tree
        self.leaf_identities = leaf_identities
        self._replayed: set[int] = set()
        self._int_map: dict[NodeRef, NodeRef] = {}

    @staticmethod
    def for_record(record: ExampleRecord) -> OracleGenerator:
        tree = record.gold_tree()
        identities = {}
        for ref, text in tree.leaves.items():
            binding = record.leaf_bindings.get(ref.token())
            premise_id = binding.premise_id if binding is not None else None
            identities[ref] = identity_key(premise_id, text)
        return OracleGenerator(tree, identities)

    def generate(self, context: GenerationContext) -> EntailmentStep:
        by_identity: dict[str, NodeRef] = {}
        for ref, text in context.available.items():
            key = identity_key(context.premise_ids[ref], text)
            by_identity.setdefault(key, ref)

        for i, gold_step in enumerate(self.gold_tree.steps):
            if i in self._replayed:
                continue
            resolved: list[NodeRef] = []
            for ant in gold_step.antecedents:
                if ant.is_leaf:
                    found = by_identity.get(self.leaf_identities[ant])
                elif ant.is_intermediate:
                    found = self._int_map.get(ant)
                else:
                    found = None
                if found is None:
                    break
                resolved.append(found)
            if len(resolved) != len(gold_step.antecedents):
                continue
            if gold_step.conclusion.is_hypothesis:
                conclusion, text = NodeRef.hypothesis(), None
            else:
                conclusion = context.fresh_intermediate()
                text = gold_step.conclusion_text
                self._int_map[gold_step.conclusion] = conclusion
            self._replayed.add(i)
            return EntailmentStep(tuple(resolved), conclusion, text)
        raise NoApplicableGoldStepError(
            f"{len(self.gold_tree.steps) - len(self._replayed)} gold steps blocked"
        )


class TemplateGenerator:
    """Deterministic stand-in generator.

    Joins the two context nodes most similar to the hypothesis into one
    step whose conclusion text is their sentences glued with "and"; once a
    single usable node remains it concludes the hypothesis from it.
    """

    def __init__(self, encoder: Encoder):
        self.encoder = encoder

    def generate(self, context: GenerationContext) -> EntailmentStep:
        nodes = context.usable_nodes()
        if not nodes:
            raise EmptyContextError("no premises or intermediates left")
        if len(nodes) == 1:
            return EntailmentStep((nodes[0][0],), NodeRef.hypothesis(), None)
        query = self.encoder.encode(context.hypothesis)
        scores = np.array([float(query @ self.encoder.encode(t)) for _, t in nodes])
        first, second = np.argsort(-scores, kind="stable")[:2]
        # Antecedents keep context presentation order.
        picked = sorted({int(first), int(second)})
        refs = (nodes[picked[0]][0], nodes[picked[1]][0])
        texts = (nodes[picked[0]][1], nodes[picked[1]][1])
        return EntailmentStep(
            refs, context.fresh_intermediate(), f"{texts[0]} and {texts[1]}"
        )


class ExternalGenerator:
    """Client for a step-generation service over HTTP.

    Sends the encoded context as the POST body to the `/step` path of the
    endpoint; expects a single clause back as plain UTF-8 text.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = DEFAULT_TIMEOUT_SECONDS,
        char_budget: int = DEFAULT_CHAR_BUDGET,
    ):
        base = endpoint.rstrip("/")
        self.url = base if base.endswith(STEP_ENDPOINT_PATH) else base + STEP_ENDPOINT_PATH
        self.timeout = timeout
        self.char_budget = char_budget

    def generate(self, context: GenerationContext) -> EntailmentStep:
        body = encode_input(context, self.char_budget).encode("utf-8")
        request = urllib.request.Request(
            self.url,
            data=body,
            method="POST",
            headers={"Content-Type": "text/plain; charset=utf-8"},
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                reply = response.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            raise TransportError(f"generator replied with status {exc.code}") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise GeneratorTimeoutError(
                    f"no reply within {self.timeout}s"
                ) from exc
            raise TransportError(f"generator unreachable: {exc.reason}") from exc
        except (socket.timeout, TimeoutError) as exc:
            raise GeneratorTimeoutError(f"no reply within {self.timeout}s") from exc
        try:
            return parse_step(reply, context)
        except ProofSyntaxError as exc:
            raise ProtocolError(f"unparseable generator reply: {exc}", reply) from exc
