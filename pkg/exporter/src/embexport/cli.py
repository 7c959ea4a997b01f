"""Command line entry points.

embexport make-model DIR --instances a.jsonl --catalog rels.json
embexport export --model DIR --instances a.jsonl --catalog rels.json --out e.cache

Exit codes: 0 success, 1 usage problems, 2 bad data or a broken model.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import ExportError, export, read_catalog, read_sentences
from .model import PRESETS, ModelError, load_model, make_model


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embexport",
        description="Run a local transformer encoder over (relation, sentence) "
        "pairs and write an FSRE embedding cache.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode pairs and write a cache file")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--instances", required=True, help="instances JSONL file")
    p.add_argument("--catalog", required=True, help='relation catalog JSON ({"names": [...]})')
    p.add_argument("--out", required=True, help="cache file to write")
    p.add_argument("--relations", default="", help="comma-separated relation ids (default: all)")
    p.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("make-model", help="create a randomly initialized local model directory")
    p.add_argument("dir", help="directory to create")
    p.add_argument("--preset", default="mini", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", help="JSONL whose tokens seed the vocabulary")
    p.add_argument("--catalog", help="catalog JSON whose descriptions seed the vocabulary")
    return parser


def _cmd_export(args: argparse.Namespace) -> int:
    sentences = read_sentences(args.instances)
    catalog = read_catalog(args.catalog)
    rids = [int(r) for r in args.relations.split(",") if r.strip()] or None
    model = load_model(args.model)
    count = export(
        sentences, catalog, model, args.out,
        relation_ids=rids, batch_size=args.batch_size,
    )
    print(f"wrote {count} records (dim {model.hidden_size}) to {args.out}")
    return 0


def _cmd_make_model(args: argparse.Namespace) -> int:
    words: set[str] = set()
    if args.instances:
        for sent in read_sentences(args.instances):
            words.update(sent.words)
    if args.catalog:
        for _, desc in read_catalog(args.catalog):
            words.update(desc)
    model = make_model(Path(args.dir), words, preset=args.preset, seed=args.seed)
    print(
        f"created {args.preset} model in {args.dir} "
        f"(hidden {model.hidden_size}, vocab {len(model.vocab)})"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            return _cmd_export(args)
        return _cmd_make_model(args)
    except (ExportError, ModelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
