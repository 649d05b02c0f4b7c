"""Command-line entry point for reproducible runs.

Subcommands wire the library into one workflow: generate or ingest a
dataset release, build a premise index, train the retrieval adapter, run
retrieval or full proofs over a split, and score the results.  Flag
values override config-file values (``IRGR_CONFIG``), which override the
built-in defaults.  Every output artifact embeds the resolved
configuration plus a content hash of each input file, and reruns with
identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from statistics import mean

from .corpus import PremiseCorpus, compute_stats, load_corpus, load_dataset
from .encoding import (
    HashedNgramEncoder,
    PrecomputedEncoder,
    TrainingConfig,
    build_training_pairs,
    load_vectors,
    save_adapter,
    train_adapter,
)
from .evaluation import evaluate, recall_at_k, retrieval_all_correct
from .generation import ExternalGenerator, TemplateGenerator
from .pipeline import PipelineConfig, oracle_factory, prove, run_batch
from .retrieval import (
    ConditionalConfig,
    PremiseIndex,
    conditional_picks,
    ranking_record,
    save_index,
    top_k,
)
from .synth import DEFAULT_SEED as SYNTH_SEED
from .synth import generate_release
from .util import dump_json, sha256_file

MODE_NAMES = {"sing": "single", "cond": "conditional", "iter": "iterative"}


class CliError(Exception):
    """Bad usage or unreadable inputs; reported without a traceback."""


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one command invocation."""

    corpus: Path | None = None
    dataset: Path | None = None
    vectors: Path | None = None
    out: Path | None = None
    mode: str = "iter"
    k0: int = 25
    omega: int = 15
    partial_label: float = 0.75
    theta: float = 0.5
    generator: str = "oracle"
    endpoint: str | None = None
    seed: int | None = None
    workers: int = 1

    def as_dict(self) -> dict:
        return {
            "corpus": str(self.corpus) if self.corpus else None,
            "dataset": str(self.dataset) if self.dataset else None,
            "vectors": str(self.vectors) if self.vectors else None,
            "out": str(self.out) if self.out else None,
            "mode": self.mode,
            "k0": self.k0,
            "omega": self.omega,
            "lambda": self.partial_label,
            "theta": self.theta,
            "generator": self.generator,
            "endpoint": self.endpoint,
            "seed": self.seed,
            "workers": self.workers,
        }

    def require(self, *fields: str) -> None:
        missing = [f for f in fields if getattr(self, f) is None]
        if missing:
            raise CliError("missing required options: --" + ", --".join(missing))


# Config-file keys use the flag spellings; "lambda" cannot be a field name.
_CONFIG_KEY_TO_FIELD = {
    "corpus": "corpus",
    "dataset": "dataset",
    "vectors": "vectors",
    "out": "out",
    "mode": "mode",
    "k0": "k0",
    "omega": "omega",
    "lambda": "partial_label",
    "theta": "theta",
    "generator": "generator",
    "endpoint": "endpoint",
    "seed": "seed",
    "workers": "workers",
}
_PATH_FIELDS = ("corpus", "dataset", "vectors", "out")


def _load_config_file(path: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CliError(f"unreadable config file {path}: {exc}")
    if not isinstance(payload, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(payload) - set(_CONFIG_KEY_TO_FIELD))
    if unknown:
        raise CliError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return {_CONFIG_KEY_TO_FIELD[k]: v for k, v in payload.items()}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the ``IRGR_CONFIG`` file, then explicit flags."""
    values: dict = {}
    config_path = os.environ.get("IRGR_CONFIG")
    if config_path:
        values.update(_load_config_file(config_path))
    for field in _CONFIG_KEY_TO_FIELD.values():
        flag_value = getattr(args, field, None)
        if flag_value is not None:
            values[field] = flag_value
    for field in _PATH_FIELDS:
        if values.get(field) is not None:
            values[field] = Path(values[field]).resolve()
    if values.get("mode") not in (None, *MODE_NAMES):
        raise CliError(f"unknown mode {values['mode']!r}")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise CliError(f"bad config value: {exc}")


# --------------------------------------------------------------------------
# Artifact helpers
# --------------------------------------------------------------------------


def _hash_path(path: Path) -> str:
    """Content hash of a file, or of a directory's data files by name."""
    if path.is_dir():
        digest = hashlib.sha256()
        for file in sorted(p for p in path.iterdir() if p.is_file()):
            digest.update(f"{file.name}:{sha256_file(file)}\n".encode())
        return digest.hexdigest()
    if not path.is_file():
        raise CliError(f"input not found: {path}")
    return sha256_file(path)


def _input_hashes(config: RunConfig, *fields: str) -> dict:
    return {
        field: {"path": str(getattr(config, field)), "sha256": _hash_path(getattr(config, field))}
        for field in fields
        if getattr(config, field) is not None
    }


def _artifact_meta(config: RunConfig, inputs: dict, **extra) -> dict:
    return {"config": config.as_dict(), "inputs": inputs, **extra}


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(payload) + "\n", encoding="utf-8")


def _load_inputs(config: RunConfig) -> tuple[PremiseCorpus, list]:
    config.require("corpus", "dataset")
    corpus = load_corpus(config.corpus)
    records = load_dataset(config.dataset, corpus)
    return corpus, records


def _build_index(config: RunConfig, corpus: PremiseCorpus) -> PremiseIndex:
    """Hashed-ngram index by default; premise vectors from ``--vectors``
    when given.  Vector-file ids outside the corpus are treated as query
    texts so hypotheses can be encoded in the same space."""
    if config.vectors is None:
        return PremiseIndex.build(corpus, HashedNgramEncoder())
    supplied = load_vectors(config.vectors)
    premise_vectors = {pid: v for pid, v in supplied.items() if pid in corpus}
    query_table = {
        corpus.text_of(pid): v for pid, v in premise_vectors.items()
    } | {key: v for key, v in supplied.items() if key not in corpus}
    encoder = PrecomputedEncoder(query_table)
    return PremiseIndex.from_vectors(corpus, premise_vectors, encoder)


def _pipeline_config(config: RunConfig) -> PipelineConfig:
    return PipelineConfig(
        fetch_count=config.k0,
        retrieval_mode=MODE_NAMES[config.mode],
        conditional=ConditionalConfig(
            fetch_count=config.k0, conditioning_split=config.omega
        ),
    )


def _generator_factory(config: RunConfig, index: PremiseIndex):
    if config.generator == "oracle":
        return oracle_factory
    if config.generator == "template":
        shared = TemplateGenerator(index.encoder)
        return lambda record: shared
    if config.generator == "external":
        config.require("endpoint")
        return lambda record: ExternalGenerator(config.endpoint)
    raise CliError(f"unknown generator {config.generator!r}")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_synth(config: RunConfig) -> int:
    config.require("out")
    config = replace(config, seed=config.seed if config.seed is not None else SYNTH_SEED)
    summary = generate_release(config.out, seed=config.seed)
    _write_json(
        config.out / "manifest.json",
        _artifact_meta(config, {}, summary=summary.as_dict()),
    )
    print(f"wrote release to {config.out}")
    print(f"{summary.example_count:,} examples / {summary.step_count:,} steps")
    print(f"corpus size: {summary.corpus_size:,}")
    splits = " / ".join(f"{k} {v:,}" for k, v in summary.split_counts.items())
    print(f"splits: {splits}")
    return 0


def cmd_ingest(config: RunConfig) -> int:
    config.require("dataset")
    corpus = load_corpus(config.corpus) if config.corpus else None
    records = load_dataset(config.dataset, corpus)
    stats = compute_stats(records, corpus)
    print(f"{stats.num_examples:,} examples / {stats.num_steps:,} steps")
    print(f"avg nodes per tree: {stats.avg_nodes_per_tree}")
    print(f"avg steps per tree: {stats.avg_steps_per_tree}")
    if corpus is not None:
        print(f"corpus size: {stats.corpus_size:,}")
    if config.out:
        inputs = _input_hashes(config, "corpus", "dataset")
        _write_json(config.out, _artifact_meta(config, inputs, stats=stats.as_dict()))
    return 0


def cmd_index(config: RunConfig) -> int:
    config.require("corpus", "out")
    corpus = load_corpus(config.corpus)
    index = _build_index(config, corpus)
    save_index(index, config.out)
    inputs = _input_hashes(config, "corpus", "vectors")
    _write_json(config.out / "run.json", _artifact_meta(config, inputs))
    print(f"indexed {len(index):,} premises (dim {index.dim}) -> {config.out}")
    return 0


def cmd_train_retriever(config: RunConfig) -> int:
    config.require("corpus", "dataset", "out")
    config = replace(config, seed=config.seed if config.seed is not None else 0)
    corpus, records = _load_inputs(config)
    encoder = HashedNgramEncoder()
    pairs = build_training_pairs(
        records, corpus, encoder,
        partial_label=config.partial_label, seed=config.seed,
    )
    adapter = train_adapter(pairs, encoder, TrainingConfig(seed=config.seed))
    inputs = _input_hashes(config, "corpus", "dataset")
    save_adapter(config.out, adapter, extra={"run": _artifact_meta(config, inputs)})
    curve = adapter.loss_curve
    print(f"trained on {len(pairs):,} pairs over {len(curve) - 1} epochs")
    print(f"loss {curve[0]:.6f} -> {min(curve):.6f}")
    return 0


def cmd_retrieve(config: RunConfig) -> int:
    corpus, records = _load_inputs(config)
    index = _build_index(config, corpus)
    conditional = ConditionalConfig(
        fetch_count=config.k0, conditioning_split=config.omega
    )

    lines: list[dict] = []
    recalls: list[float] = []
    correct: list[int] = []
    for record in sorted(records, key=lambda r: r.id):
        if config.mode == "sing":
            picks = top_k(index.encoder.encode(record.hypothesis), index, config.k0)
            lines.append(ranking_record(record.id, picks))
            retrieved = [p.premise_id for p in picks]
        elif config.mode == "cond":
            picks = conditional_picks(record.hypothesis, index, conditional)
            lines.append(ranking_record(record.id, picks))
            retrieved = [p.premise_id for p in picks]
        else:
            # Gold-replay mode: the oracle generator supplies each step, so
            # every later fetch is conditioned on a gold intermediate.
            result = prove(
                record.hypothesis,
                index,
                oracle_factory(record),
                _pipeline_config(config),
            )
            seen: list[str] = []
            for iteration in result.trace.iterations:
                fresh = [pid for pid in iteration.retrieved if pid not in seen]
                seen.extend(fresh)
                lines.append(
                    {
                        "query_id": f"{record.id}#t{iteration.t}",
                        "ranking": [{"id": pid} for pid in iteration.retrieved],
                    }
                )
            retrieved = seen
        gold = {binding.premise_id for binding in record.leaf_bindings.values()}
        recalls.append(recall_at_k(retrieved, gold))
        correct.append(retrieval_all_correct(retrieved, gold))

    metrics = {
        f"recall_at_{config.k0}": mean(recalls),
        "all_correct": mean(correct),
        "examples": len(records),
    }
    print(f"mode {config.mode}: {len(records):,} queries")
    print(f"R@{config.k0}: {metrics[f'recall_at_{config.k0}']:.4f}")
    print(f"all-correct: {metrics['all_correct']:.4f}")
    if config.out:
        inputs = _input_hashes(config, "corpus", "dataset", "vectors")
        meta = _artifact_meta(config, inputs, metrics=metrics)
        config.out.parent.mkdir(parents=True, exist_ok=True)
        with open(config.out, "w", encoding="utf-8") as handle:
            handle.write(dump_json({"meta": meta}) + "\n")
            for line in lines:
                handle.write(dump_json(line) + "\n")
    return 0


def cmd_prove(config: RunConfig) -> int:
    corpus, records = _load_inputs(config)
    index = _build_index(config, corpus)
    inputs = _input_hashes(config, "corpus", "dataset", "vectors")
    predictions = run_batch(
        records,
        index,
        _generator_factory(config, index),
        _pipeline_config(config),
        out_path=config.out,
        parallelism=config.workers,
        meta=_artifact_meta(config, inputs),
    )
    outcomes = Counter(p["termination"] for p in predictions)
    print(f"proved {len(predictions):,} examples")
    for name, count in sorted(outcomes.items()):
        print(f"{name}: {count:,}")
    return 0


def _read_artifact_lines(path: Path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as handle:
        rows = [json.loads(line) for line in handle if line.strip()]
    if not rows or "meta" not in rows[0]:
        raise CliError(f"{path}: expected a meta line followed by records")
    return rows[0]["meta"], rows[1:]


def cmd_eval(config: RunConfig, artifact: str) -> int:
    corpus, records = _load_inputs(config)
    path = Path(artifact).resolve()
    meta, rows = _read_artifact_lines(path)
    inputs = _input_hashes(config, "corpus", "dataset")
    inputs["artifact"] = {"path": str(path), "sha256": _hash_path(path)}

    if rows and "query_id" in rows[0]:
        # Rankings: union the per-query picks by example id and score recall.
        by_example: dict[str, list[str]] = {}
        for row in rows:
            example_id = row["query_id"].split("#", 1)[0]
            seen = by_example.setdefault(example_id, [])
            seen.extend(p["id"] for p in row["ranking"] if p["id"] not in seen)
        recalls, correct = [], []
        for record in records:
            gold = {b.premise_id for b in record.leaf_bindings.values()}
            retrieved = by_example.get(record.id, [])
            recalls.append(recall_at_k(retrieved, gold))
            correct.append(retrieval_all_correct(retrieved, gold))
        payload = {
            "retrieval": {
                "recall": mean(recalls),
                "all_correct": mean(correct),
                "examples": len(records),
            }
        }
        print(f"retrieval over {len(records):,} examples")
        print(f"recall: {payload['retrieval']['recall']:.4f}")
        print(f"all-correct: {payload['retrieval']['all_correct']:.4f}")
    else:
        report = evaluate(
            records,
            {row["id"]: row for row in rows},
            threshold=config.theta,
            config={"theta": config.theta, "scorer": "token-f1"},
        )
        payload = {"report": report.as_dict()}
        print(report.render_table())

    if config.out:
        _write_json(config.out, _artifact_meta(config, inputs, **payload))
    return 0


# --------------------------------------------------------------------------
# Parser and entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irgr",
        description="Premise retrieval, entailment-tree generation, scoring.",
    )
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--corpus", help="premise corpus (.tsv)")
    shared.add_argument("--dataset", help="dataset split file or release directory")
    shared.add_argument("--vectors", help="premise vector file")
    shared.add_argument("--mode", choices=sorted(MODE_NAMES), help="retrieval mode")
    shared.add_argument("--k0", type=int, help="first-iteration fetch size")
    shared.add_argument("--omega", type=int, help="unconditioned picks before conditioning starts")
    shared.add_argument("--lambda", dest="partial_label", type=float,
                        help="label for gold premises outside the current step")
    shared.add_argument("--theta", type=float, help="alignment similarity threshold")
    shared.add_argument("--generator", choices=["oracle", "template", "external"])
    shared.add_argument("--endpoint", help="external generator base URL")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--workers", type=int)
    shared.add_argument("--out", help="output artifact path")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("synth", parents=[shared],
                        help="generate the benchmark release")
    commands.add_parser("ingest", parents=[shared],
                        help="load a dataset and report its statistics")
    commands.add_parser("index", parents=[shared],
                        help="encode a corpus and persist the index")
    commands.add_parser("train-retriever", parents=[shared],
                        help="fit the re-embedding adapter")
    commands.add_parser("retrieve", parents=[shared],
                        help="rank premises for every dataset hypothesis")
    commands.add_parser("prove", parents=[shared],
                        help="generate entailment trees for a split")
    evaluate_cmd = commands.add_parser("eval", parents=[shared],
                                       help="score predictions or rankings")
    evaluate_cmd.add_argument("artifact", help="predictions or rankings file")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "ingest":
            return cmd_ingest(config)
        if args.command == "index":
            return cmd_index(config)
        if args.command == "train-retriever":
            return cmd_train_retriever(config)
        if args.command == "retrieve":
            return cmd_retrieve(config)
        if args.command == "prove":
            return cmd_prove(config)
        if args.command == "eval":
            return cmd_eval(config, args.artifact)
        raise CliError(f"unknown command {args.command!r}")
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure needs a diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
