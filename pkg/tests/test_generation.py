"""Generator context encoding, output parsing, and the generator backends."""

import http.server
import threading

import pytest

from conftest import NOTEBOOK_HYPOTHESIS, NOTEBOOK_SENTENCES
from irgr.encoding import HashedNgramEncoder
from irgr.generation import (
    EmptyContextError,
    GenerationContext,
    MultipleStepsError,
    NoApplicableGoldStepError,
    OracleGenerator,
    ProtocolError,
    StaleConclusionError,
    TemplateGenerator,
    ExternalGenerator,
    TransportError,
    UnknownRefError,
    encode_input,
    parse_step,
)
from irgr.trees import NodeRef, serialize_step


def _notebook_context():
    context = GenerationContext(NOTEBOOK_HYPOTHESIS)
    context.add_premises(sorted(NOTEBOOK_SENTENCES.items()))
    return context


# --------------------------------------------------------------------------
# Context
# --------------------------------------------------------------------------


def test_add_premises_assigns_sequential_slots():
    context = GenerationContext("some hypothesis")
    refs = context.add_premises([("p1", "first"), ("p2", "second")])
    assert [r.token() for r in refs] == ["sent1", "sent2"]
    more = context.add_premises([("p3", "third")])
    assert [r.token() for r in more] == ["sent3"]


def test_add_premises_skips_already_seen_ids():
    context = GenerationContext("some hypothesis")
    context.add_premises([("p1", "first")])
    refs = context.add_premises([("p1", "first again"), ("p2", "second")])
    assert [r.token() for r in refs] == ["sent2"]
    assert context.seen_premise_ids() == {"p1", "p2"}


def test_apply_step_moves_nodes_out_of_the_pool():
    context = _notebook_context()
    step = parse_step("sent2 & sent3 -> int1: notebook paper is recyclable;", context)
    context.apply_step(step)
    usable = {ref.token() for ref, _ in context.usable_nodes()}
    assert usable == {"sent1", "int1"}
    assert context.text_of(NodeRef.parse("int1")) == "notebook paper is recyclable"


def test_fresh_intermediate_counts_up():
    context = _notebook_context()
    assert context.fresh_intermediate().token() == "int1"
    step = parse_step("sent2 & sent3 -> int1: notebook paper is recyclable;", context)
    context.apply_step(step)
    assert context.fresh_intermediate().token() == "int2"


# --------------------------------------------------------------------------
# Input encoding
# --------------------------------------------------------------------------


def test_encode_input_layout_before_any_step():
    context = _notebook_context()
    encoded = encode_input(context)
    assert encoded == (
        "hypothesis: notebook paper can be recycled many times; "
        "sent1: recyclable means a material can be recycled / reused many times "
        "sent2: paper is recyclable "
        "sent3: notebook paper is a kind of paper;"
    )


def test_encode_input_appends_history_clauses():
    context = _notebook_context()
    step = parse_step("sent2 & sent3 -> int1: notebook paper is recyclable;", context)
    context.apply_step(step)
    encoded = encode_input(context)
    assert encoded.endswith(serialize_step(step))
    assert "sent2:" not in encoded
    assert "sent1: recyclable means" in encoded


def test_encode_input_drops_lowest_ranked_premises_over_budget():
    context = GenerationContext("short hypothesis")
    context.add_premises([("p1", "kept premise"), ("p2", "x" * 500)])
    encoded = encode_input(context, char_budget=120)
    assert "kept premise" in encoded
    assert "xxx" not in encoded
    assert len(encoded) <= 120


# --------------------------------------------------------------------------
# Output parsing
# --------------------------------------------------------------------------


def test_parse_step_accepts_one_valid_clause():
    step = parse_step(
        "sent2 & sent3 -> int1: notebook paper is recyclable;", _notebook_context()
    )
    assert step.conclusion.token() == "int1"


def test_parse_step_rejects_two_clauses():
    with pytest.raises(MultipleStepsError):
        parse_step(
            "sent2 -> int1: a; int1 & sent1 -> hypothesis;", _notebook_context()
        )


def test_parse_step_rejects_unknown_premise():
    with pytest.raises(UnknownRefError):
        parse_step("sent9 -> int1: something;", _notebook_context())


def test_parse_step_rejects_unconcluded_intermediate():
    with pytest.raises(UnknownRefError):
        parse_step("int1 & sent1 -> hypothesis;", _notebook_context())


def test_parse_step_rejects_reused_conclusion():
    context = _notebook_context()
    context.apply_step(
        parse_step("sent2 & sent3 -> int1: notebook paper is recyclable;", context)
    )
    with pytest.raises(StaleConclusionError):
        parse_step("sent1 -> int1: recycled text;", context)


# --------------------------------------------------------------------------
# Oracle generator
# --------------------------------------------------------------------------


def test_oracle_reproduces_the_gold_proof(notebook_record):
    generator = OracleGenerator.for_record(notebook_record)
    context = GenerationContext(notebook_record.hypothesis)
    context.add_premises(
        [(None, b.text) for b in notebook_record.leaf_bindings.values()]
    )
    first = generator.generate(context)
    context.apply_step(first)
    second = generator.generate(context)
    context.apply_step(second)
    assert serialize_step(first) == "sent2 & sent3 -> int1: notebook paper is recyclable;"
    assert serialize_step(second) == "int1 & sent1 -> hypothesis;"


def test_oracle_tolerates_shuffled_slot_numbers(notebook_record):
    generator = OracleGenerator.for_record(notebook_record)
    context = GenerationContext(notebook_record.hypothesis)
    texts = [b.text for b in notebook_record.leaf_bindings.values()]
    context.add_premises([(None, t) for t in reversed(texts)])
    step = generator.generate(context)
    concluded = {
        step.conclusion_text if not step.conclusion.is_hypothesis else None
    }
    assert concluded == {"notebook paper is recyclable"}


def test_oracle_blocks_without_gold_leaves(notebook_record):
    generator = OracleGenerator.for_record(notebook_record)
    context = GenerationContext(notebook_record.hypothesis)
    context.add_premises([("x", "an unrelated premise")])
    with pytest.raises(NoApplicableGoldStepError):
        generator.generate(context)


# --------------------------------------------------------------------------
# Template generator
# --------------------------------------------------------------------------


def test_template_generator_emits_applicable_steps():
    generator = TemplateGenerator(HashedNgramEncoder())
    context = _notebook_context()
    step = generator.generate(context)
    context.apply_step(step)
    assert step.conclusion.token() == "int1"
    assert len(step.antecedents) == 2


def test_template_generator_concludes_hypothesis_from_last_node():
    generator = TemplateGenerator(HashedNgramEncoder())
    context = GenerationContext("a single fact holds")
    context.add_premises([("p1", "the only fact")])
    step = generator.generate(context)
    assert step.conclusion.is_hypothesis


def test_template_generator_needs_a_nonempty_context():
    generator = TemplateGenerator(HashedNgramEncoder())
    with pytest.raises(EmptyContextError):
        generator.generate(GenerationContext("anything"))


# --------------------------------------------------------------------------
# External generator
# --------------------------------------------------------------------------


class _ScriptedHandler(http.server.BaseHTTPRequestHandler):
    replies: list[tuple[int, str]] = []

    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        status, body = self.replies.pop(0)
        payload = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def scripted_server():
    server = http.server.HTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", _ScriptedHandler
    server.shutdown()
    thread.join()


def test_external_generator_round_trip(scripted_server):
    endpoint, handler = scripted_server
    handler.replies = [(200, "sent2 & sent3 -> int1: notebook paper is recyclable;")]
    generator = ExternalGenerator(endpoint)
    step = generator.generate(_notebook_context())
    assert serialize_step(step) == "sent2 & sent3 -> int1: notebook paper is recyclable;"


def test_external_generator_maps_http_errors_to_transport(scripted_server):
    endpoint, handler = scripted_server
    handler.replies = [(500, "boom")]
    with pytest.raises(TransportError):
        ExternalGenerator(endpoint).generate(_notebook_context())


def test_external_generator_rejects_malformed_reply(scripted_server):
    endpoint, handler = scripted_server
    handler.replies = [(200, "this is not a clause")]
    with pytest.raises(ProtocolError) as info:
        ExternalGenerator(endpoint).generate(_notebook_context())
    assert info.value.raw_reply == "this is not a clause"


def test_external_generator_unreachable_host_is_transport_error():
    generator = ExternalGenerator("http://127.0.0.1:1", timeout=0.5)
    with pytest.raises(TransportError):
        generator.generate(_notebook_context())
