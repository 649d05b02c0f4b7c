"""Command-line entry points for the bridge helpers."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import LOCAL_ENCODER_NAME, ModelLoadError
from .export import DEFAULT_BATCH_SIZE, ExportJob, export_embeddings
from .service import MODES, BindError, serve_generator
from .vectors import IoError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irgr-bridge")
    commands = parser.add_subparsers(dest="command", required=True)

    export = commands.add_parser("export", help="write corpus vectors to a file")
    export.add_argument("--corpus", required=True, type=Path)
    export.add_argument("--out", required=True, type=Path)
    export.add_argument("--model", default=LOCAL_ENCODER_NAME)
    export.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)

    serve = commands.add_parser("serve", help="run the stub step service")
    serve.add_argument("--port", type=int, default=0)
    serve.add_argument("--mode", choices=MODES, default="template")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            job = ExportJob(args.corpus, args.out, args.model, args.batch_size)
            count = export_embeddings(job)
            print(f"wrote {count:,} vectors to {args.out}")
            return 0
        if args.command == "serve":
            server = serve_generator(args.port, args.mode)
            print(f"serving {args.mode} steps on {server.endpoint}/step")
            server.wait()
            return 0
        raise AssertionError(f"unhandled command {args.command!r}")
    except (ModelLoadError, IoError, BindError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
