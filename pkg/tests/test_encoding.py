"""Sentence encoders, vector files, and retriever adapter training."""

import numpy as np
import pytest

from irgr.encoding import (
    DimensionMismatchError,
    EmptyTextError,
    EncoderAdapter,
    HashedNgramEncoder,
    PrecomputedEncoder,
    TrainingConfig,
    UnknownIdError,
    VECTOR_MAGIC,
    VectorFormatError,
    build_training_pairs,
    compose_query_text,
    compose_step_text,
    encode_query,
    load_adapter,
    load_vectors,
    loss_from_vectors,
    loss_gradient,
    save_adapter,
    step_surface_text,
    save_vectors,
    train_adapter,
)


# --------------------------------------------------------------------------
# Hashed n-gram encoder
# --------------------------------------------------------------------------


def test_encoder_is_deterministic(encoder):
    a = encoder.encode("the cat sat on the mat")
    b = encoder.encode("the cat sat on the mat")
    assert np.array_equal(a, b)


def test_encoder_output_is_unit_norm(encoder):
    vec = encoder.encode("a dog chased the cat")
    assert vec.shape == (encoder.dim,)
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-9


def test_encoder_normalizes_case_and_whitespace(encoder):
    assert np.array_equal(
        encoder.encode("Water is   WET"), encoder.encode("water is wet")
    )


def test_encoder_separates_unrelated_sentences(encoder):
    a = encoder.encode("the cat sat on the mat")
    b = encoder.encode("planets orbit the sun")
    assert float(a @ b) < 0.5


def test_encoder_rejects_empty_text(encoder):
    with pytest.raises(EmptyTextError):
        encoder.encode("   ")


def test_encoder_seed_changes_projection():
    a = HashedNgramEncoder(seed=0).encode("the cat sat on the mat")
    b = HashedNgramEncoder(seed=1).encode("the cat sat on the mat")
    assert not np.array_equal(a, b)


# --------------------------------------------------------------------------
# Precomputed vectors and the binary vector format
# --------------------------------------------------------------------------


def test_precomputed_encoder_looks_up_normalized_text():
    table = {"water is wet": np.array([3.0, 4.0])}
    enc = PrecomputedEncoder(table)
    vec = enc.encode("  Water is WET ")
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-9
    with pytest.raises(UnknownIdError):
        enc.encode("sand is dry")


def test_precomputed_encoder_falls_back():
    fallback = HashedNgramEncoder(dim=32)
    table = {"water is wet": fallback.encode("water is wet")}
    enc = PrecomputedEncoder(table, fallback=fallback)
    assert np.array_equal(enc.encode("sand is dry"), fallback.encode("sand is dry"))


def test_vector_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    vectors = {f"id-{i}": rng.normal(size=16) for i in range(5)}
    path = tmp_path / "vecs.bin"
    save_vectors(path, vectors)
    assert path.read_bytes()[: len(VECTOR_MAGIC)] == VECTOR_MAGIC
    loaded = load_vectors(path)
    assert set(loaded) == set(vectors)
    for key, vec in vectors.items():
        unit = vec / np.linalg.norm(vec)
        assert np.allclose(loaded[key], unit, atol=1e-6)


def test_vector_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "vecs.bin"
    path.write_bytes(b"NOTAVECS" + b"\x00" * 32)
    with pytest.raises(VectorFormatError):
        load_vectors(path)


def test_vector_file_rejects_truncation(tmp_path):
    path = tmp_path / "vecs.bin"
    save_vectors(path, {"a": np.ones(8)})
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(VectorFormatError):
        load_vectors(path)


def test_vector_file_checks_ids_against_corpus(tmp_path, toy_corpus):
    path = tmp_path / "vecs.bin"
    save_vectors(path, {"d1": np.ones(8), "ghost": np.ones(8)})
    with pytest.raises(UnknownIdError):
        load_vectors(path, toy_corpus)


def test_vector_file_checks_expected_dim(tmp_path):
    path = tmp_path / "vecs.bin"
    save_vectors(path, {"a": np.ones(8)})
    with pytest.raises(DimensionMismatchError):
        load_vectors(path, expect_dim=16)


def test_vector_file_rejects_zero_norm(tmp_path):
    path = tmp_path / "vecs.bin"
    save_vectors(path, {"a": np.zeros(8)})
    with pytest.raises(VectorFormatError):
        load_vectors(path)


# --------------------------------------------------------------------------
# Query composition
# --------------------------------------------------------------------------


def test_compose_step_text_joins_antecedents_and_conclusion():
    text = compose_step_text(["first fact", "second fact"], "the conclusion")
    assert "first fact" in text
    assert "second fact" in text
    assert text.endswith("the conclusion")


def test_step_surface_text_reads_from_tree(notebook_tree):
    text = step_surface_text(notebook_tree, notebook_tree.steps[0])
    assert "paper is recyclable" in text
    assert "notebook paper is a kind of paper" in text


def test_compose_query_text_prefixes_hypothesis():
    text = compose_query_text("h text", "step text")
    assert text.startswith("h text")
    assert text.endswith("step text")
    assert compose_query_text("h text", None) == "h text"


def test_encode_query_matches_manual_composition(encoder):
    direct = encoder.encode(compose_query_text("the sky is blue", "air scatters light"))
    composed = encode_query(encoder, "the sky is blue", "air scatters light")
    assert np.array_equal(direct, composed)


# --------------------------------------------------------------------------
# Training pairs
# --------------------------------------------------------------------------


def test_training_pairs_label_scheme(dev_records, corpus, encoder):
    multi_step = [r for r in dev_records if len(r.gold_tree().steps) >= 2][:5]
    pairs = build_training_pairs(multi_step, corpus, encoder, seed=0)
    labels = {p.label for p in pairs}
    # Full relevance is only assigned to leaves the previous step consumed,
    # so it needs trees with at least two steps.
    assert 1.0 in labels
    assert 0.0 in labels
    assert labels <= {0.0, 0.75, 1.0}


def test_training_pairs_partial_label_is_configurable(dev_records, corpus, encoder):
    pairs = build_training_pairs(
        dev_records[:5], corpus, encoder, partial_label=0.4, seed=0
    )
    assert {p.label for p in pairs} <= {0.0, 0.4, 1.0}


def test_training_pairs_are_deterministic(dev_records, corpus, encoder):
    first = build_training_pairs(dev_records[:3], corpus, encoder, seed=5)
    second = build_training_pairs(dev_records[:3], corpus, encoder, seed=5)
    assert first == second


# --------------------------------------------------------------------------
# Adapter
# --------------------------------------------------------------------------


def test_identity_adapter_is_a_no_op(encoder):
    adapter = EncoderAdapter.identity(4)
    vec = np.array([0.5, -0.5, 0.5, -0.5])
    assert np.allclose(adapter.apply(vec), vec)


def test_adapter_wrap_projects_then_normalizes(encoder):
    rng = np.random.default_rng(0)
    matrix = np.eye(encoder.dim) + 0.01 * rng.normal(size=(encoder.dim, encoder.dim))
    adapter = EncoderAdapter(matrix=matrix, config=TrainingConfig(), loss_curve=[])
    wrapped = adapter.wrap(encoder)
    out = wrapped.encode("the cat sat on the mat")
    assert abs(np.linalg.norm(out) - 1.0) < 1e-9
    manual = matrix @ encoder.encode("the cat sat on the mat")
    assert np.allclose(out, manual / np.linalg.norm(manual))


def test_train_adapter_reduces_loss(dev_records, corpus, encoder):
    pairs = build_training_pairs(dev_records[:10], corpus, encoder, seed=0)
    config = TrainingConfig(learning_rate=0.5, epochs=8, seed=0)
    adapter = train_adapter(pairs, encoder, config)
    assert adapter.matrix.shape == (encoder.dim, encoder.dim)
    assert min(adapter.loss_curve) < adapter.loss_curve[0]


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    dim, count = 6, 9
    queries = rng.normal(size=(count, dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    premises = rng.normal(size=(count, dim))
    premises /= np.linalg.norm(premises, axis=1, keepdims=True)
    labels = rng.choice([0.0, 0.75, 1.0], size=count)
    matrix = np.eye(dim) + 0.05 * rng.normal(size=(dim, dim))

    grad = loss_gradient(matrix, queries, premises, labels)
    eps = 1e-6
    for idx in [(0, 0), (2, 3), (5, 1)]:
        bump = np.zeros_like(matrix)
        bump[idx] = eps
        up = loss_from_vectors(matrix + bump, queries, premises, labels)
        down = loss_from_vectors(matrix - bump, queries, premises, labels)
        numeric = (up - down) / (2 * eps)
        assert abs(grad[idx] - numeric) < 1e-5


def test_adapter_save_load_round_trip(tmp_path, dev_records, corpus, encoder):
    pairs = build_training_pairs(dev_records[:5], corpus, encoder, seed=0)
    adapter = train_adapter(pairs, encoder, TrainingConfig(epochs=3, seed=0))
    path = tmp_path / "adapter.json"
    save_adapter(path, adapter, extra={"note": "round trip"})
    loaded = load_adapter(path)
    assert np.array_equal(loaded.matrix, adapter.matrix)
    assert loaded.loss_curve == adapter.loss_curve
    assert loaded.config.epochs == 3


def test_load_adapter_rejects_garbage(tmp_path):
    path = tmp_path / "adapter.json"
    path.write_text('{"dim": 4}', encoding="utf-8")
    with pytest.raises(VectorFormatError):
        load_adapter(path)
