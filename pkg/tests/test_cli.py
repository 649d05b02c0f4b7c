"""Command-line interface: precedence, artifacts, and determinism."""

import json

import pytest

from irgr.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def small_release(tmp_path, release_dir, corpus, dev_records):
    """A 6-example slice of the release, for fast command runs."""
    from irgr.corpus import save_corpus
    from irgr.util import dump_json

    root = tmp_path / "slice"
    root.mkdir()
    save_corpus(root / "corpus.tsv", corpus)
    subset = dev_records[:6]
    rows = []
    for record in subset:
        context = " ".join(
            f"{slot}: {binding.text}"
            for slot, binding in sorted(
                record.leaf_bindings.items(), key=lambda kv: int(kv[0][4:])
            )
        )
        rows.append(
            {
                "id": record.id,
                "hypothesis": record.hypothesis,
                "question": record.question,
                "context": context,
                "proof": record.gold_proof,
            }
        )
    (root / "dev.jsonl").write_text(
        "".join(dump_json(r) + "\n" for r in rows), encoding="utf-8"
    )
    return root


# --------------------------------------------------------------------------
# ingest
# --------------------------------------------------------------------------


def test_ingest_reports_headline_counts(capsys, release_dir):
    code, out, _ = _run(
        capsys,
        "ingest",
        "--dataset", str(release_dir),
        "--corpus", str(release_dir / "corpus.tsv"),
    )
    assert code == 0
    assert "1,840 examples / 5,881 steps" in out


def test_ingest_writes_a_report_artifact(capsys, tmp_path, small_release):
    report = tmp_path / "report.json"
    code, _, _ = _run(
        capsys,
        "ingest",
        "--dataset", str(small_release / "dev.jsonl"),
        "--corpus", str(small_release / "corpus.tsv"),
        "--out", str(report),
    )
    assert code == 0
    payload = json.loads(report.read_text(encoding="utf-8"))
    assert payload["stats"]["num_examples"] == 6
    assert payload["config"]["k0"] == 25
    assert set(payload["inputs"]) == {"corpus", "dataset"}


def test_missing_required_option_fails_cleanly(capsys):
    code, _, err = _run(capsys, "ingest")
    assert code == 2
    assert err.startswith("error:")


# --------------------------------------------------------------------------
# index / retrieve
# --------------------------------------------------------------------------


@pytest.fixture()
def small_index(capsys, tmp_path, small_release):
    out = tmp_path / "idx"
    code, _, _ = _run(
        capsys, "index", "--corpus", str(small_release / "corpus.tsv"), "--out", str(out)
    )
    assert code == 0
    return out


def test_retrieve_conditional_writes_rankings(capsys, tmp_path, small_release):
    out = tmp_path / "rankings.jsonl"
    code, _, _ = _run(
        capsys,
        "retrieve",
        "--corpus", str(small_release / "corpus.tsv"),
        "--dataset", str(small_release / "dev.jsonl"),
        "--mode", "cond",
        "--out", str(out),
    )
    assert code == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    meta = json.loads(lines[0])["meta"]
    assert meta["config"]["mode"] == "cond"
    assert "metrics" in meta
    rows = [json.loads(line) for line in lines[1:]]
    assert len(rows) == 6
    assert all(len(row["ranking"]) == 25 for row in rows)


def test_retrieve_reruns_are_byte_identical(capsys, tmp_path, small_release):
    args = [
        "retrieve",
        "--corpus", str(small_release / "corpus.tsv"),
        "--dataset", str(small_release / "dev.jsonl"),
        "--mode", "sing",
    ]
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    assert _run(capsys, *args, "--out", str(first))[0] == 0
    assert _run(capsys, *args, "--out", str(second))[0] == 0
    strip = lambda p: p.read_text(encoding="utf-8").splitlines()[1:]
    assert strip(first) == strip(second)
    meta_a = json.loads(first.read_text(encoding="utf-8").splitlines()[0])["meta"]
    meta_b = json.loads(second.read_text(encoding="utf-8").splitlines()[0])["meta"]
    assert meta_a["inputs"] == meta_b["inputs"]


def test_vectors_file_supplies_premise_and_query_vectors(
    capsys, tmp_path, small_release, small_index
):
    """A vector file with premise records plus hypothesis-text records drives
    single-query retrieval identically to the built-in encoder."""
    from irgr.corpus import load_dataset
    from irgr.encoding import HashedNgramEncoder, load_vectors, save_vectors

    records = load_dataset(small_release / "dev.jsonl")
    encoder = HashedNgramEncoder()
    vectors = dict(load_vectors(small_index / "premises.vec"))
    for record in records:
        vectors[record.hypothesis] = encoder.encode(record.hypothesis)
    combined = tmp_path / "combined.vec"
    save_vectors(combined, vectors)

    with_vectors = tmp_path / "with.jsonl"
    without = tmp_path / "without.jsonl"
    base = [
        "retrieve",
        "--corpus", str(small_release / "corpus.tsv"),
        "--dataset", str(small_release / "dev.jsonl"),
        "--mode", "sing",
    ]
    assert _run(capsys, *base, "--vectors", str(combined), "--out", str(with_vectors))[0] == 0
    assert _run(capsys, *base, "--out", str(without))[0] == 0

    def id_lists(path):
        rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()[1:]]
        return [(row["query_id"], [e["id"] for e in row["ranking"]]) for row in rows]

    # Vector files quantize to 32-bit floats, which can reorder near-ties;
    # the clear winners and the retrieved set must survive.
    for (qa, ids_a), (qb, ids_b) in zip(id_lists(with_vectors), id_lists(without)):
        assert qa == qb
        assert ids_a[:5] == ids_b[:5]
        assert len(set(ids_a) & set(ids_b)) >= 24


# --------------------------------------------------------------------------
# prove / eval
# --------------------------------------------------------------------------


def test_prove_then_eval_round_trip(capsys, tmp_path, small_release):
    preds = tmp_path / "preds.jsonl"
    code, out, _ = _run(
        capsys,
        "prove",
        "--corpus", str(small_release / "corpus.tsv"),
        "--dataset", str(small_release / "dev.jsonl"),
        "--generator", "oracle",
        "--out", str(preds),
    )
    assert code == 0
    assert "HypothesisReached: 6" in out

    code, out, _ = _run(
        capsys,
        "eval",
        str(preds),
        "--dataset", str(small_release / "dev.jsonl"),
        "--corpus", str(small_release / "corpus.tsv"),
    )
    assert code == 0
    assert "1.000" in out


def test_eval_handles_ranking_artifacts(capsys, tmp_path, small_release):
    rankings = tmp_path / "rankings.jsonl"
    _run(
        capsys,
        "retrieve",
        "--corpus", str(small_release / "corpus.tsv"),
        "--dataset", str(small_release / "dev.jsonl"),
        "--mode", "cond",
        "--out", str(rankings),
    )
    code, out, _ = _run(
        capsys,
        "eval",
        str(rankings),
        "--dataset", str(small_release / "dev.jsonl"),
        "--corpus", str(small_release / "corpus.tsv"),
    )
    assert code == 0
    assert "recall: 1.0000" in out


# --------------------------------------------------------------------------
# Config precedence
# --------------------------------------------------------------------------


def test_config_file_overrides_defaults(capsys, tmp_path, small_release, monkeypatch):
    config_file = tmp_path / "config.json"
    config_file.write_text(json.dumps({"k0": 7, "lambda": 0.4}), encoding="utf-8")
    monkeypatch.setenv("IRGR_CONFIG", str(config_file))
    report = tmp_path / "report.json"
    _run(
        capsys,
        "ingest",
        "--dataset", str(small_release / "dev.jsonl"),
        "--out", str(report),
    )
    payload = json.loads(report.read_text(encoding="utf-8"))
    assert payload["config"]["k0"] == 7
    assert payload["config"]["lambda"] == 0.4


def test_flags_override_config_file(capsys, tmp_path, small_release, monkeypatch):
    config_file = tmp_path / "config.json"
    config_file.write_text(json.dumps({"k0": 7}), encoding="utf-8")
    monkeypatch.setenv("IRGR_CONFIG", str(config_file))
    report = tmp_path / "report.json"
    _run(
        capsys,
        "ingest",
        "--dataset", str(small_release / "dev.jsonl"),
        "--k0", "11",
        "--out", str(report),
    )
    payload = json.loads(report.read_text(encoding="utf-8"))
    assert payload["config"]["k0"] == 11


def test_unknown_config_key_is_rejected(capsys, tmp_path, small_release, monkeypatch):
    config_file = tmp_path / "config.json"
    config_file.write_text(json.dumps({"fetch": 9}), encoding="utf-8")
    monkeypatch.setenv("IRGR_CONFIG", str(config_file))
    code, _, err = _run(
        capsys, "ingest", "--dataset", str(small_release / "dev.jsonl")
    )
    assert code == 2
    assert "fetch" in err


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------


def test_synth_writes_a_manifest(capsys, tmp_path):
    out = tmp_path / "release"
    code, printed, _ = _run(capsys, "synth", "--out", str(out))
    assert code == 0
    assert "1,840 examples / 5,881 steps" in printed
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["summary"]["example_count"] == 1840
    for name in ("corpus.tsv", "train.jsonl", "dev.jsonl", "test.jsonl"):
        assert (out / name).exists()
