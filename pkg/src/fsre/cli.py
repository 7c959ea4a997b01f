"""Command line interface.

Every command resolves its settings in three layers: built-in defaults,
then a JSON config file given with --config, then explicit flags. The
resolved configuration is echoed to stdout before any work happens, so a
logged run can always be reproduced.

Exit codes: 0 on success, 1 on usage errors (unknown flag, missing or
malformed config, bad flag value), 2 on data errors (bad corpus, corrupt
cache or checkpoint, impossible sampling).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, evalbench, fewshot, ingest, report, synthetic
from .encoding import CacheEmbeddingProvider, HashEmbeddingProvider
from .evalbench import BenchScenario
from .fewshot import LossConfig, SamplerConfig, SamplingError
from .tagging import SCHEME_IDS, get_scheme
from .types import RelationCatalog, Triple

_DEFAULTS: dict[str, dict] = {
    "synth": {
        "out": "corpus.jsonl",
        "n_instances": 200,
        "min_len": 6,
        "max_len": 12,
        "seed": 0,
    },
    "sample": {
        "corpus": "corpus.jsonl",
        "catalog": "synthetic",
        "scheme": "tplinker",
        "categories": "",
        "n_ways": 2,
        "k_shots": 1,
        "seed": 0,
    },
    "tag": {
        "instance": "corpus.jsonl",
        "catalog": "synthetic",
        "scheme": "tplinker",
        "instance_id": -1,
        "relation": "0",
    },
    "pretrain": {
        "corpus": "corpus.jsonl",
        "catalog": "synthetic",
        "scheme": "tplinker",
        "steps": 200,
        "batch_size": 128,
        "dim": 32,
        "hidden": 32,
        "lr": 2e-5,
        "negatives_per_instance": 1,
        "embed_seed": 0,
        "seed": 0,
        "cache": "",
        "out": "pretrained.fscp",
    },
    "finetune": {
        "corpus": "corpus.jsonl",
        "catalog": "synthetic",
        "scheme": "tplinker",
        "init": "",
        "steps": 300,
        "n_ways": 2,
        "k_shots": 1,
        "dim": 32,
        "hidden": 32,
        "lr": 2e-5,
        "neg_mode": "min",
        "distance": "accel",
        "top_e": 3,
        "gamma": 0.9,
        "categories": "",
        "embed_seed": 0,
        "seed": 0,
        "cache": "",
        "out": "finetuned.fscp",
    },
    "eval": {
        "corpus": "corpus.jsonl",
        "catalog": "synthetic",
        "scheme": "tplinker",
        "ckpt": "",
        "episodes": 50,
        "n_ways": 2,
        "k_shots": 1,
        "dim": 32,
        "hidden": 32,
        "categories": "",
        "embed_seed": 0,
        "seed": 0,
        "cache": "",
        "out_dir": "reports/eval",
    },
    "bench": {
        "seed": 0,
        "dim": 32,
        "hidden": 32,
        "episodes": 20,
        "top_e": 3,
        "out_dir": "reports/bench",
    },
    "cache-info": {"cache": "embeddings.fsre"},
    "export-cache": {
        "corpus": "corpus.jsonl",
        "catalog": "synthetic",
        "dim": 32,
        "embed_seed": 0,
        "relations": "present",
        "out": "embeddings.fsre",
    },
}


def _load_catalog(spec: str) -> RelationCatalog:
    if spec == "synthetic":
        return synthetic.make_catalog()
    if spec == "nyt24":
        return ingest.nyt24_catalog()
    data = json.loads(Path(spec).read_text(encoding="utf-8"))
    return ingest.build_catalog(data["names"])


def _provider(cfg: dict, catalog: RelationCatalog):
    if cfg.get("cache"):
        return CacheEmbeddingProvider(ingest.EmbeddingCache(cfg["cache"]))
    return HashEmbeddingProvider(catalog, dim=cfg["dim"], seed=cfg["embed_seed"])


def _parse_categories(raw: str, catalog: RelationCatalog) -> list[int]:
    if not raw:
        return list(range(len(catalog)))
    return [int(c) for c in raw.split(",") if c.strip()]


def _triple_dict(t: Triple, catalog: RelationCatalog) -> dict:
    return {
        "head": list(t.head),
        "tail": list(t.tail),
        "relation": catalog.name_of(t.relation_id),
    }


def _read_corpus(cfg: dict, catalog: RelationCatalog):
    instances, warnings = ingest.read_instances(cfg["corpus"], catalog, skip_invalid=True)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not instances:
        raise ingest.IngestError(f"{cfg['corpus']}: no usable instances")
    return instances


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_synth(cfg: dict) -> int:
    catalog = synthetic.make_catalog()
    corpus = synthetic.make_corpus(
        synthetic.SynthConfig(cfg["n_instances"], cfg["min_len"], cfg["max_len"]),
        np.random.default_rng(cfg["seed"]),
    )
    ingest.write_instances(cfg["out"], corpus, catalog)
    print(f"wrote {len(corpus)} instances to {cfg['out']}")
    return 0


def _cmd_sample(cfg: dict) -> int:
    catalog = _load_catalog(cfg["catalog"])
    instances = _read_corpus(cfg, catalog)
    scheme = get_scheme(cfg["scheme"])
    rng = np.random.default_rng(cfg["seed"])
    cats = _parse_categories(cfg["categories"], catalog)
    if len(cats) > cfg["n_ways"]:
        cats = [int(c) for c in rng.choice(sorted(cats), cfg["n_ways"], replace=False)]
    episode = fewshot.sample_episode(
        instances, cats, SamplerConfig(cfg["n_ways"], cfg["k_shots"]), rng, scheme
    )
    print(
        json.dumps(
            {
                "categories": list(episode.categories),
                "support": [
                    {
                        "id": ex.instance.id,
                        "m": ex.instance.m,
                        "relations": sorted(ex.instance.relation_ids()),
                    }
                    for ex in episode.support
                ],
                "query": {"id": episode.query.id, "m": episode.query.m},
                "gold": [_triple_dict(t, catalog) for t in sorted(episode.query_gold)],
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_tag(cfg: dict) -> int:
    catalog = _load_catalog(cfg["catalog"])
    instances = _read_corpus(dict(cfg, corpus=cfg["instance"]), catalog)
    if cfg["instance_id"] < 0:
        inst = instances[0]
    else:
        by_id = {x.id: x for x in instances}
        if cfg["instance_id"] not in by_id:
            raise ingest.IngestError(f"no instance with id {cfg['instance_id']}")
        inst = by_id[cfg["instance_id"]]
    raw = str(cfg["relation"])
    try:
        rid = int(raw) if raw.lstrip("-").isdigit() else catalog.id_of(raw)
    except KeyError:
        raise ValueError(f"unknown relation {raw!r}") from None
    scheme = get_scheme(cfg["scheme"])
    labels = scheme.encode(inst.m, inst.triples, rid)
    chunks = []
    for c in range(labels.layout.num_chunks):
        arr = labels.chunk(c)
        nz = np.nonzero(arr)[0]
        chunks.append(
            {"chunk": c, "nonzero": [[int(p), int(arr[p])] for p in nz]}
        )
    decoded = scheme.decode(labels, rid, inst.m)
    print(
        json.dumps(
            {
                "instance_id": inst.id,
                "m": inst.m,
                "relation": catalog.name_of(rid),
                "scheme": scheme.scheme_id,
                "chunks": chunks,
                "roundtrip": [_triple_dict(t, catalog) for t in sorted(decoded)],
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_pretrain(cfg: dict) -> int:
    catalog = _load_catalog(cfg["catalog"])
    instances = _read_corpus(cfg, catalog)
    provider = _provider(cfg, catalog)
    scheme = get_scheme(cfg["scheme"])
    rng = np.random.default_rng(cfg["seed"])
    state = fewshot.init_train_state(
        scheme, provider.dim, cfg["hidden"], rng, lr=cfg["lr"], with_classifier=True
    )
    examples = fewshot.pretrain_examples(
        instances, len(catalog), rng, cfg["negatives_per_instance"]
    )
    history = fewshot.run_pretrain(
        state, examples, cfg["steps"], cfg["batch_size"], rng, provider, scheme
    )
    checkpoint.save_checkpoint(cfg["out"], state, rng)
    print(
        f"pretrained {cfg['steps']} steps on {len(examples)} pairs; "
        f"loss {history[0]:.4f} -> {history[-1]:.4f}; saved {cfg['out']}"
    )
    return 0


def _cmd_finetune(cfg: dict) -> int:
    catalog = _load_catalog(cfg["catalog"])
    instances = _read_corpus(cfg, catalog)
    provider = _provider(cfg, catalog)
    rng = np.random.default_rng(cfg["seed"])
    if cfg["init"]:
        state, _ = checkpoint.load_checkpoint(cfg["init"])
        scheme = get_scheme(state.scheme_id)
        state.reset_optimizer(cfg["lr"], heads_only=True)
    else:
        scheme = get_scheme(cfg["scheme"])
        state = fewshot.init_train_state(
            scheme, provider.dim, cfg["hidden"], rng, lr=cfg["lr"], with_classifier=False
        )
    cats = _parse_categories(cfg["categories"], catalog)
    history = fewshot.run_finetune(
        state,
        instances,
        cats,
        SamplerConfig(cfg["n_ways"], cfg["k_shots"]),
        LossConfig(cfg["neg_mode"], cfg["distance"], cfg["top_e"]),
        cfg["steps"],
        rng,
        provider,
        scheme,
        gamma=cfg["gamma"],
    )
    checkpoint.save_checkpoint(cfg["out"], state, rng)
    print(
        f"finetuned {cfg['steps']} episodes; "
        f"loss {history[0]:.4f} -> {history[-1]:.4f}; saved {cfg['out']}"
    )
    return 0


def _cmd_eval(cfg: dict) -> int:
    catalog = _load_catalog(cfg["catalog"])
    instances = _read_corpus(cfg, catalog)
    provider = _provider(cfg, catalog)
    if cfg["ckpt"]:
        state, _ = checkpoint.load_checkpoint(cfg["ckpt"])
        scheme = get_scheme(state.scheme_id)
    else:
        scheme = get_scheme(cfg["scheme"])
        state = fewshot.init_train_state(
            scheme,
            provider.dim,
            cfg["hidden"],
            np.random.default_rng(cfg["seed"]),
            with_classifier=False,
        )
    cats = _parse_categories(cfg["categories"], catalog)
    result = evalbench.evaluate(
        instances,
        cats,
        state.params,
        scheme,
        provider,
        SamplerConfig(cfg["n_ways"], cfg["k_shots"]),
        cfg["episodes"],
        cfg["seed"],
        prototypes=state.prototypes,
    )
    paths = report.eval_report(cfg["out_dir"], result)
    micro = result["micro"]
    print(
        f"episodes {cfg['episodes']}; micro precision {micro['precision']:.4f} "
        f"recall {micro['recall']:.4f} f1 {micro['f1']:.4f}"
    )
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_bench(cfg: dict) -> int:
    scenarios = [
        BenchScenario(4, (4,), 2, 1),
        BenchScenario(8, (8, 8), 3, 2),
        BenchScenario(16, (12, 16), 3, 4),
        BenchScenario(32, (32, 32), 3, 6),
        BenchScenario(50, (50, 50, 50, 50), 3, 8),
    ]
    kernels = evalbench.bench_kernels(scenarios, cfg["seed"], cfg["hidden"])
    catalog = synthetic.make_catalog()
    corpus = synthetic.make_corpus(
        synthetic.SynthConfig(n_instances=150), np.random.default_rng(cfg["seed"] + 1)
    )
    provider = HashEmbeddingProvider(catalog, dim=cfg["dim"], seed=0)
    state = fewshot.init_train_state(
        get_scheme("tplinker"),
        cfg["dim"],
        cfg["hidden"],
        np.random.default_rng(cfg["seed"]),
        with_classifier=False,
    )
    sampler = SamplerConfig(n_ways=2, k_shots=1)
    shared = (corpus, list(range(len(catalog))), state.params, provider, sampler,
              cfg["episodes"], cfg["seed"])
    assumption = {
        "fixed": evalbench.bench_assumption(*shared, top_e=cfg["top_e"]),
        "scaled": evalbench.bench_assumption(*shared, top_e=None),
    }
    result = {"kernels": kernels, "assumption": assumption}
    paths = report.bench_report(cfg["out_dir"], result)
    last = kernels["scenarios"][-1]
    print(
        f"largest scenario m={last['m_query']}: speedup "
        f"{last['seconds']['speedup']:.1f}x; counter match "
        f"{last['ops']['exact_match'] and last['ops']['accel_match']}"
    )
    print(
        f"shortlist coverage violation rate: fixed top_e "
        f"{assumption['fixed']['violation_rate']:.6f}, scaled "
        f"{assumption['scaled']['violation_rate']:.6f}"
    )
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_cache_info(cfg: dict) -> int:
    info = ingest.scan_cache(cfg["cache"])
    bad = [r for r in info["records"] if not r["crc_ok"]]
    print(
        json.dumps(
            {
                "dim": info["dim"],
                "version": info["version"],
                "n_records": info["n_records"],
                "n_crc_errors": info["n_crc_errors"],
                "first_bad": bad[:10],
            },
            sort_keys=True,
        )
    )
    return 2 if bad else 0


def _cmd_export_cache(cfg: dict) -> int:
    catalog = _load_catalog(cfg["catalog"])
    instances = _read_corpus(cfg, catalog)
    provider = HashEmbeddingProvider(catalog, dim=cfg["dim"], seed=cfg["embed_seed"])
    if cfg["relations"] not in ("present", "all"):
        raise ValueError("relations must be 'present' or 'all'")
    count = 0
    with ingest.CacheWriter(cfg["out"], cfg["dim"]) as writer:
        for inst in instances:
            rids = (
                sorted(inst.relation_ids())
                if cfg["relations"] == "present"
                else range(len(catalog))
            )
            for rid in rids:
                writer.add(inst.id, rid, provider.embed(inst, rid).astype(np.float32))
                count += 1
    print(f"wrote {count} records to {cfg['out']}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "sample": _cmd_sample,
    "tag": _cmd_tag,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "cache-info": _cmd_cache_info,
    "export-cache": _cmd_export_cache,
}

_HELP = {
    "synth": "generate a synthetic corpus",
    "sample": "draw one episode and print it",
    "tag": "encode one instance under a scheme and show the roundtrip",
    "pretrain": "supervised tagging pretraining",
    "finetune": "episodic metric finetuning",
    "eval": "evaluate episodes and write a report",
    "bench": "benchmark the distance paths and write a report",
    "cache-info": "inspect an embedding cache file",
    "export-cache": "write hash-encoder embeddings to a cache file",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract here is 1
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fsre",
        description="few-shot relation extraction by metric sequence tagging",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in _DEFAULTS.items():
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", default=None, help="JSON file with settings")
        for key, value in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(value, bool):
                p.add_argument(flag, action="store_true", default=None)
            elif isinstance(value, int):
                p.add_argument(flag, type=int, default=None)
            elif isinstance(value, float):
                p.add_argument(flag, type=float, default=None)
            else:
                p.add_argument(flag, default=None)
    return parser


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    cfg = dict(defaults)
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if "scheme" in cfg and cfg["scheme"] not in SCHEME_IDS:
        raise ValueError(f"scheme must be one of {SCHEME_IDS}")
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args, _DEFAULTS[args.command])
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    print(f"config {json.dumps(cfg, sort_keys=True)}")
    try:
        return _COMMANDS[args.command](cfg)
    except (
        # IngestError subclasses ValueError: data errors must win
        ingest.IngestError,
        ingest.CacheError,
        checkpoint.CheckpointError,
        SamplingError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
