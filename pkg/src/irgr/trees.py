"""Entailment-tree data structures and the linearized proof DSL.

A proof is a `;`-separated sequence of entailment steps, each of the form

    sent1 & sent2 -> int1: some conclusion text
    sent3 & int1 -> hypothesis

Leaf nodes are written ``sentN``, intermediate conclusions ``intN`` and the
tree root ``hypothesis``. Intermediate conclusions carry their sentence text
inline (after the colon, verbatim up to the next ``;``); leaf sentences are
bound externally. The grammar is whitespace-tolerant and a trailing ``;`` is
optional.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Literal

NodeKind = Literal["leaf", "intermediate", "hypothesis"]
ViolationCode = Literal[
    "DanglingRef",
    "CycleDetected",
    "MultipleRoots",
    "UnusedIntermediate",
    "Disconnected",
    "BadStepOrder",
]

_REF_RE = re.compile(r"(sent|int)([1-9]\d*)$")
_INT_CONCLUSION_RE = re.compile(r"(int[1-9]\d*)\s*:\s*(.*)$", re.DOTALL)


class TreeError(Exception):
    """Base class for proof parsing and tree validation errors."""


class ProofSyntaxError(TreeError):
    """A clause does not match the proof grammar."""


class DanglingRefError(TreeError):
    """A referenced node has no binding or defining step."""


class TreeViolationError(TreeError):
    """A parsed structure fails the entailment-tree invariants."""

    def __init__(self, violations: list[TreeViolation]):
        self.violations = violations
        super().__init__("; ".join(f"{v.code}: {v.detail}" for v in violations))


class StepNotInTreeError(TreeError):
    pass


class RefNotInTreeError(TreeError):
    pass


@dataclass(frozen=True, order=True)
class NodeRef:
    """Reference to one tree node: a leaf, an intermediate, or the root."""

    kind: NodeKind
    index: int | None = None

    @staticmethod
    def leaf(index: int) -> NodeRef:
        return NodeRef("leaf", index)

    @staticmethod
    def intermediate(index: int) -> NodeRef:
        return NodeRef("intermediate", index)

    @staticmethod
    def hypothesis() -> NodeRef:
        return NodeRef("hypothesis", None)

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"

    @property
    def is_intermediate(self) -> bool:
        return self.kind == "intermediate"

    @property
    def is_hypothesis(self) -> bool:
        return self.kind == "hypothesis"

    def token(self) -> str:
        if self.kind == "hypothesis":
            return "hypothesis"
        prefix = "sent" if self.kind == "leaf" else "int"
        return f"{prefix}{self.index}"

    @staticmethod
    def parse(token: str) -> NodeRef:
        token = token.strip()
        if token == "hypothesis":
            return NodeRef.hypothesis()
        m = _REF_RE.fullmatch(token)
        if m is None:
            raise ProofSyntaxError(f"invalid node reference {token!r}")
        kind: NodeKind = "leaf" if m.group(1) == "sent" else "intermediate"
        return NodeRef(kind, int(m.group(2)))

    def __str__(self) -> str:
        return self.token()


@dataclass(frozen=True)
class EntailmentStep:
    """One inference from a conjunction of antecedents to a conclusion.

    ``conclusion_text`` is required for intermediate conclusions and must be
    absent when the conclusion is the hypothesis.
    """

    antecedents: tuple[NodeRef, ...]
    conclusion: NodeRef
    conclusion_text: str | None = None

    def __post_init__(self) -> None:
        if not self.antecedents:
            raise ProofSyntaxError("step has no antecedents")
        if len(set(self.antecedents)) != len(self.antecedents):
            raise ProofSyntaxError("duplicate antecedent in step")
        if any(a.is_hypothesis for a in self.antecedents):
            raise ProofSyntaxError("hypothesis cannot be an antecedent")
        if self.conclusion.is_leaf:
            raise ProofSyntaxError("a leaf cannot be a conclusion")
        if self.conclusion in self.antecedents:
            raise ProofSyntaxError("step concludes one of its own antecedents")
        if self.conclusion.is_intermediate and not self.conclusion_text:
            raise ProofSyntaxError(f"missing text for conclusion {self.conclusion}")
        if self.conclusion.is_hypothesis and self.conclusion_text is not None:
            raise ProofSyntaxError("hypothesis conclusion carries no inline text")

    def antecedent_leaf_refs(self) -> tuple[NodeRef, ...]:
        return tuple(a for a in self.antecedents if a.is_leaf)

    def clause(self) -> str:
        """Render as one DSL clause without the trailing semicolon."""
        lhs = " & ".join(a.token() for a in self.antecedents)
        if self.conclusion.is_hypothesis:
            return f"{lhs} -> hypothesis"
        return f"{lhs} -> {self.conclusion.token()}: {self.conclusion_text}"


@dataclass(frozen=True)
class TreeViolation:
    code: ViolationCode
    detail: str


@dataclass(frozen=True)
class EntailmentTree:
    """A hypothesis explained from leaf premises via ordered entailment steps.

    Instances are immutable; construct via :func:`parse_linearized` or
    :func:`build_tree` to get invariant checking.
    """

    hypothesis_text: str
    leaves: dict[NodeRef, str] = field(default_factory=dict)
    intermediates: dict[NodeRef, str] = field(default_factory=dict)
    steps: tuple[EntailmentStep, ...] = ()

    def text_of(self, ref: NodeRef) -> str:
        if ref.is_hypothesis:
            return self.hypothesis_text
        if ref.is_leaf:
            if ref not in self.leaves:
                raise RefNotInTreeError(f"{ref} not in tree")
            return self.leaves[ref]
        if ref not in self.intermediates:
            raise RefNotInTreeError(f"{ref} not in tree")
        return self.intermediates[ref]

    def node_count(self) -> int:
        # Leaves, intermediates and the hypothesis root.
        return len(self.leaves) + len(self.intermediates) + 1

    def final_step(self) -> EntailmentStep:
        if not self.steps:
            raise StepNotInTreeError("tree has no steps")
        return self.steps[-1]


def serialize_step(step: EntailmentStep) -> str:
    return step.clause() + ";"


def serialize(tree: EntailmentTree) -> str:
    """Linearize the tree from leaves to root, one clause per step."""
    return " ".join(serialize_step(s) for s in tree.steps)


def _parse_clause(clause: str) -> EntailmentStep:
    parts = clause.split("->")
    if len(parts) != 2:
        raise ProofSyntaxError(f"clause must contain exactly one '->': {clause!r}")
    lhs, rhs = parts[0], parts[1].strip()

    antecedents = []
    for token in lhs.split("&"):
        token = token.strip()
        if not token:
            raise ProofSyntaxError(f"empty antecedent in clause {clause!r}")
        ref = NodeRef.parse(token)
        if ref.is_hypothesis:
            raise ProofSyntaxError("hypothesis cannot be an antecedent")
        antecedents.append(ref)

    if rhs == "hypothesis":
        return EntailmentStep(tuple(antecedents), NodeRef.hypothesis())
    m = _INT_CONCLUSION_RE.fullmatch(rhs)
    if m is None:
        raise ProofSyntaxError(f"bad conclusion in clause {clause!r}")
    text = m.group(2).strip()
    if not text:
        raise ProofSyntaxError(f"missing conclusion text in clause {clause!r}")
    return EntailmentStep(tuple(antecedents), NodeRef.parse(m.group(1)), text)


def parse_steps(proof_text: str) -> list[EntailmentStep]:
    """Parse the clause sequence only, without binding leaves or validating."""
    steps = []
    for segment in proof_text.split(";"):
        if not segment.strip():
            continue
        steps.append(_parse_clause(segment.strip()))
    if not steps:
        raise ProofSyntaxError("proof contains no steps")
    return steps


def build_tree(
    hypothesis_text: str,
    steps: Iterable[EntailmentStep],
    leaf_texts: Callable[[NodeRef], str | None],
    strict: bool = True,
) -> EntailmentTree:
    """Assemble a tree from parsed steps, resolving leaf texts via a lookup.

    With ``strict`` the assembled tree must validate cleanly; otherwise the
    possibly-degenerate structure is returned for inspection.
    """
    steps = tuple(steps)
    leaves: dict[NodeRef, str] = {}
    intermediates: dict[NodeRef, str] = {}
    for step in steps:
        for ref in step.antecedents:
            if ref.is_leaf and ref not in leaves:
                text = leaf_texts(ref)
                if text is None:
                    raise DanglingRefError(f"no binding for leaf {ref}")
                leaves[ref] = text
        if step.conclusion.is_intermediate and step.conclusion not in intermediates:
            intermediates[step.conclusion] = step.conclusion_text or ""
    tree = EntailmentTree(hypothesis_text, leaves, intermediates, steps)
    if strict:
        violations = validate(tree)
        if violations:
            raise TreeViolationError(violations)
    return tree


def parse_linearized(
    proof_text: str,
    leaf_bindings: dict[str, str],
    hypothesis_text: str,
    strict: bool = True,
) -> EntailmentTree:
    """Parse a linearized proof against leaf bindings (``sentN`` -> sentence)."""
    steps = parse_steps(proof_text)
    return build_tree(
        hypothesis_text, steps, lambda ref: leaf_bindings.get(ref.token()), strict
    )


def validate(tree: EntailmentTree) -> list[TreeViolation]:
    """Report every violated tree invariant; an empty list means valid."""
    violations: list[TreeViolation] = []
    steps = tree.steps

    concluded_by: dict[NodeRef, list[int]] = {}
    for i, step in enumerate(steps):
        concluded_by.setdefault(step.conclusion, []).append(i)

    hyp_steps = concluded_by.get(NodeRef.hypothesis(), [])
    if len(hyp_steps) != 1:
        detail = (
            "no step concludes the hypothesis"
            if not hyp_steps
            else f"{len(hyp_steps)} steps conclude the hypothesis"
        )
        violations.append(TreeViolation("MultipleRoots", detail))
    elif hyp_steps[0] != len(steps) - 1:
        violations.append(
            TreeViolation("BadStepOrder", "the hypothesis step is not the last step")
        )

    for ref, indices in concluded_by.items():
        if ref.is_intermediate and len(indices) > 1:
            violations.append(
                TreeViolation(
                    "BadStepOrder", f"{ref} is concluded by {len(indices)} steps"
                )
            )

    used_at: dict[NodeRef, list[int]] = {}
    for i, step in enumerate(steps):
        for ref in step.antecedents:
            used_at.setdefault(ref, []).append(i)
            if ref.is_leaf:
                if ref not in tree.leaves:
                    violations.append(
                        TreeViolation("DanglingRef", f"{ref} has no leaf binding")
                    )
            elif ref.is_intermediate:
                defs = concluded_by.get(ref)
                if not defs:
                    violations.append(
                        TreeViolation("DanglingRef", f"{ref} is never concluded")
                    )
                elif min(defs) >= i:
                    violations.append(
                        TreeViolation(
                            "BadStepOrder", f"{ref} is used before it is concluded"
                        )
                    )

    for ref in tree.intermediates:
        if ref not in concluded_by:
            violations.append(
                TreeViolation("DanglingRef", f"{ref} is declared but never concluded")
            )

    for ref in concluded_by:
        if ref.is_intermediate and ref not in used_at:
            violations.append(
                TreeViolation(
                    "UnusedIntermediate", f"{ref} is never used as an antecedent"
                )
            )

    # Cycle check over the antecedent -> conclusion relation.
    graph: dict[NodeRef, set[NodeRef]] = {}
    for step in steps:
        for ref in step.antecedents:
            graph.setdefault(ref, set()).add(step.conclusion)
    state: dict[NodeRef, int] = {}

    def has_cycle(node: NodeRef) -> bool:
        state[node] = 1
        for succ in graph.get(node, ()):
            mark = state.get(succ)
            if mark == 1:
                return True
            if mark is None and has_cycle(succ):
                return True
        state[node] = 2
        return False

    cycle = any(state.get(n) is None and has_cycle(n) for n in graph)
    if cycle:
        violations.append(
            TreeViolation("CycleDetected", "the step relation contains a cycle")
        )

    # Connectivity: every node must sit below the hypothesis root.
    reachable: set[NodeRef] = {NodeRef.hypothesis()}
    queue = deque([NodeRef.hypothesis()])
    while queue:
        node = queue.popleft()
        for i in concluded_by.get(node, []):
            for ref in steps[i].antecedents:
                if ref not in reachable:
                    reachable.add(ref)
                    queue.append(ref)
    for ref in list(tree.leaves) + list(tree.intermediates):
        if ref not in reachable:
            already = any(
                v.code == "UnusedIntermediate" and v.detail.startswith(str(ref) + " ")
                for v in violations
            )
            if not already:
                violations.append(
                    TreeViolation(
                        "Disconnected", f"{ref} is not reachable from the hypothesis"
                    )
                )
    return violations


def antecedent_leaves(tree: EntailmentTree, step: EntailmentStep) -> set[NodeRef]:
    """Direct antecedents of ``step`` restricted to leaf nodes."""
    if step not in tree.steps:
        raise StepNotInTreeError("step does not belong to this tree")
    return set(step.antecedent_leaf_refs())


def node_depth(tree: EntailmentTree, ref: NodeRef) -> int:
    """Edges on the shortest path from the hypothesis root down to ``ref``."""
    if ref.is_hypothesis:
        return 0
    if ref not in tree.leaves and ref not in tree.intermediates:
        raise RefNotInTreeError(f"{ref} not in tree")
    concluded_by: dict[NodeRef, list[int]] = {}
    for i, step in enumerate(tree.steps):
        concluded_by.setdefault(step.conclusion, []).append(i)
    depth = {NodeRef.hypothesis(): 0}
    queue = deque([NodeRef.hypothesis()])
    while queue:
        node = queue.popleft()
        for i in concluded_by.get(node, []):
            for ant in tree.steps[i].antecedents:
                if ant not in depth:
                    depth[ant] = depth[node] + 1
                    queue.append(ant)
    if ref not in depth:
        raise RefNotInTreeError(f"{ref} is not connected to the hypothesis")
    return depth[ref]


def canonicalize(tree: EntailmentTree) -> EntailmentTree:
    """Renumber refs canonically: leaves by first appearance in step order,
    intermediates by definition order. Texts and structure are unchanged."""
    mapping: dict[NodeRef, NodeRef] = {NodeRef.hypothesis(): NodeRef.hypothesis()}
    next_leaf = 1
    next_int = 1
    for step in tree.steps:
        for ref in step.antecedents:
            if ref.is_leaf and ref not in mapping:
                mapping[ref] = NodeRef.leaf(next_leaf)
                next_leaf += 1
        if step.conclusion.is_intermediate and step.conclusion not in mapping:
            mapping[step.conclusion] = NodeRef.intermediate(next_int)
            next_int += 1

    def remap(ref: NodeRef) -> NodeRef:
        if ref not in mapping:
            # Unreachable nodes keep a stable slot after the mapped ones.
            raise RefNotInTreeError(f"{ref} does not appear in any step")
        return mapping[ref]

    steps = tuple(
        replace(
            s,
            antecedents=tuple(remap(a) for a in s.antecedents),
            conclusion=remap(s.conclusion),
        )
        for s in tree.steps
    )
    leaves = {mapping[r]: t for r, t in tree.leaves.items() if r in mapping}
    intermediates = {mapping[r]: t for r, t in tree.intermediates.items() if r in mapping}
    return EntailmentTree(tree.hypothesis_text, leaves, intermediates, steps)


def canonical_equal(a: EntailmentTree, b: EntailmentTree) -> bool:
    """Structural equality up to canonical ref renumbering."""
    return canonicalize(a) == canonicalize(b)
