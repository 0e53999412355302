"""embedtool command line: export embeddings, project them to 2-D."""

from __future__ import annotations

import argparse
import sys

from . import EmbedToolError
from .encoders import ENCODERS
from .export import export_embeddings
from .labels import load_labels
from .project import project_2d, read_embeddings, write_coordinates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embedtool")
    commands = parser.add_subparsers(dest="command", required=True)

    export = commands.add_parser("export", help="encode a label file")
    export.add_argument("--labels", required=True, help="key,label CSV")
    export.add_argument("--encoder", required=True,
                        help=f"one of {', '.join(ENCODERS)}")
    export.add_argument("--out", required=True)
    export.add_argument("--model-path",
                        help="local model: word2vec text file for word_avg_300d, "
                             "saved-model dir or hub URL for sentence encoders")

    project = commands.add_parser("project", help="2-D coordinates for plotting")
    project.add_argument("--embeddings", required=True)
    project.add_argument("--out", required=True)
    project.add_argument("--seed", type=int, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            result = export_embeddings(load_labels(args.labels), args.encoder,
                                       args.out, model_path=args.model_path)
            print(f"wrote {result.written} vectors to {args.out}"
                  + (f" ({len(result.skipped)} skipped)" if result.skipped else ""))
        else:
            keys, matrix = read_embeddings(args.embeddings)
            write_coordinates(project_2d(keys, matrix, seed=args.seed), args.out)
            print(f"wrote {len(keys)} coordinate pairs to {args.out}")
        return 0
    except EmbedToolError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
