"""Command-line surface.

Subcommands: generate, build-graph, train, evaluate, ablate, stats.  A JSON
config file supplies defaults; flags override file values.  All artifacts
embed the config hash, seed, and tool version.  Exit codes: 0 ok, 1 usage
error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .augment import AugmentConfig
from .corpus import (
    DescriptionEntry,
    DescriptionTable,
    VocabSet,
    attach_descriptions,
    load_resumes,
    save_resumes,
)
from .errors import CareerGraphError, DataError, NumericError, UsageError
from .evaluation import (
    ExperimentSpec,
    SplitSpec,
    compute_metrics,
    metrics_document,
    run_ablation,
    run_experiment,
    write_metrics,
)
from .generators import (
    CareerSchema,
    GeneratorConfig,
    corpus_stats,
    default_schema,
    generate,
)
from .graph import build_global_graph, load_graph, save_graph
from .model import ModelConfig, ModelParams, compile_resumes, forward

# Recognized config sections and keys; unknown keys are rejected.
CONFIG_SCHEMA = {
    "corpus": {"real", "fakes", "desc_map", "embeddings", "fallback_dim", "min_company_occurrences"},
    "generator": {
        "method", "count", "seed", "popular_top_fraction",
        "lognormal_mu", "lognormal_sigma", "n_swaps",
    },
    "graph": {"tau", "layers"},
    "augment": {"mode", "hop_threshold", "max_added_nodes", "seed"},
    "model": {
        "d", "d_d", "layers", "heads", "encoder_blocks", "dropout", "epochs",
        "patience", "batch_size", "lr", "lr_decay", "lr_patience", "lr_floor", "seed",
    },
    "split": {"test_fraction", "val_fraction_of_train", "seed", "stratify_by_label"},
    "experiment": {"seeds", "include_combined", "per_generator"},
    "output_dir": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through our exit codes
        raise UsageError(message)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON config ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    for key, value in doc.items():
        if key not in CONFIG_SCHEMA:
            raise UsageError(f"{path}: unknown config key {key!r}")
        allowed = CONFIG_SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise UsageError(f"{path}: section {key!r} must be an object")
        unknown = set(value) - allowed
        if unknown:
            raise UsageError(f"{path}: unknown keys in {key!r}: {sorted(unknown)}")
    return doc


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _section(doc: dict, name: str) -> dict:
    return dict(doc.get(name, {}))


def _load_corpus_bundle(cfg: dict, vocabs: VocabSet):
    """Load real + fake resume files and build the description table."""
    corpus_cfg = _section(cfg, "corpus")
    real_path = corpus_cfg.get("real")
    if not real_path:
        raise UsageError("config is missing corpus.real")
    real = load_resumes(real_path, vocabs, expected_label=0)
    fakes = {}
    for tag, path in sorted(corpus_cfg.get("fakes", {}).items()):
        fakes[tag] = load_resumes(path, vocabs, expected_label=1)
    desc_map = corpus_cfg.get("desc_map")
    if not desc_map:
        raise UsageError("config is missing corpus.desc_map")
    desc_table = attach_descriptions(
        vocabs,
        desc_map,
        embedding_path=corpus_cfg.get("embeddings"),
        fallback_dim=corpus_cfg.get("fallback_dim", 64),
    )
    return real, fakes, desc_table


def _experiment_pieces(cfg: dict, seed_override: int | None):
    model_cfg = ModelConfig(**_section(cfg, "model"))
    augment_cfg = AugmentConfig(**_section(cfg, "augment"))
    split_spec = SplitSpec(**_section(cfg, "split"))
    exp = _section(cfg, "experiment")
    seeds = list(exp.get("seeds", [1, 2, 3, 4, 5]))
    if seed_override is not None:
        seeds = [seed_override]
    spec = ExperimentSpec(
        seeds=seeds,
        model=model_cfg,
        augment=augment_cfg,
        split=split_spec,
        tau=_section(cfg, "graph").get("tau", 0.9),
        include_combined=exp.get("include_combined", True),
        per_generator=exp.get("per_generator", True),
    )
    return spec


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    gen_cfg_doc = _section(cfg, "generator")
    for key, value in (
        ("method", args.method), ("count", args.count), ("seed", args.seed),
    ):
        if value is not None:
            gen_cfg_doc[key] = value
    if "method" not in gen_cfg_doc:
        raise UsageError("generate needs --method (or generator.method in the config)")
    gen_cfg_doc.setdefault("count", 100)
    gen_cfg_doc.setdefault("seed", 0)
    gen_cfg = GeneratorConfig(**gen_cfg_doc)
    vocabs = VocabSet()
    corpus = None
    schema = None
    if gen_cfg.method == "markov_real":
        schema = CareerSchema.load(args.schema) if args.schema else default_schema()
    else:
        if not args.corpus:
            raise UsageError(f"--corpus is required for method {gen_cfg.method!r}")
        corpus = load_resumes(args.corpus, vocabs)
    resumes = generate(gen_cfg, vocabs, corpus=corpus, schema=schema)
    save_resumes(resumes, args.out, vocabs)
    if args.desc_out and schema is not None:
        write_schema_descriptions(schema, args.desc_out, args.emb_out, args.emb_dim)
    print(f"wrote {len(resumes)} resumes to {args.out}", file=sys.stderr)
    return 0


def write_schema_descriptions(
    schema: CareerSchema, desc_path: str, emb_path: str | None, dim: int
) -> None:
    """Emit mapping (and optionally structured vector) files for a schema."""
    descriptions = schema.descriptions()
    with open(desc_path, "w", encoding="utf-8") as fh:
        for title in sorted(descriptions):
            fh.write(json.dumps({"title": title, "description": descriptions[title]}, sort_keys=True))
            fh.write("\n")
    if emb_path:
        vectors = schema.description_vectors(dim)
        with open(emb_path, "w", encoding="utf-8") as fh:
            for title in sorted(vectors):
                fh.write(
                    json.dumps({"key": title, "vector": vectors[title].tolist()}, sort_keys=True)
                )
                fh.write("\n")


def cmd_build_graph(args) -> int:
    vocabs = VocabSet()
    real = load_resumes(args.real, vocabs)  # labels must already be 0
    desc_table = attach_descriptions(
        vocabs, args.desc_map, embedding_path=args.embeddings, fallback_dim=args.fallback_dim
    )
    graph = build_global_graph(real, desc_table, tau=args.tau)
    save_graph(graph, args.out)
    print(
        f"graph: {graph.node_count()} nodes, {graph.edge_count()} forward edges, "
        f"tau={graph.meta['tau']}",
        file=sys.stderr,
    )
    return 0


def _checkpoint_extra(vocabs: VocabSet, desc_table: DescriptionTable, chash: str, seed) -> dict:
    return {
        "config_hash": chash,
        "seed": seed,
        "tool_version": __version__,
        "vocab": {
            "titles": vocabs.titles.tokens(),
            "companies": vocabs.companies.tokens(),
            "descriptions": vocabs.descriptions.tokens(),
        },
        "desc_table": [
            {
                "title_id": title_id,
                "desc_id": entry.desc_id,
                "text": entry.text,
                "vector": entry.vector.tolist(),
            }
            for title_id, entry in sorted(desc_table.items())
        ],
    }


def _restore_from_extra(extra: dict) -> tuple[VocabSet, DescriptionTable]:
    vocabs = VocabSet()
    for vocab, tokens in (
        (vocabs.titles, extra["vocab"]["titles"]),
        (vocabs.companies, extra["vocab"]["companies"]),
        (vocabs.descriptions, extra["vocab"]["descriptions"]),
    ):
        for token in tokens[1:]:  # position 0 is the UNK entry
            vocab.add(token)
    vocabs.freeze()
    entries = {}
    dim = 0
    for row in extra["desc_table"]:
        vec = np.asarray(row["vector"], dtype=np.float64)
        dim = vec.shape[0]
        entries[int(row["title_id"])] = DescriptionEntry(
            desc_id=int(row["desc_id"]), text=row["text"], vector=vec
        )
    return vocabs, DescriptionTable(entries, dim)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    out_dir = args.out or cfg.get("output_dir")
    if not out_dir:
        raise UsageError("train needs --out or output_dir in the config")
    os.makedirs(out_dir, exist_ok=True)
    vocabs = VocabSet()
    real, fakes, desc_table = _load_corpus_bundle(cfg, vocabs)
    if not fakes:
        raise UsageError("training needs at least one fake corpus (corpus.fakes)")
    spec = _experiment_pieces(cfg, args.seed)
    results = run_experiment(spec, real, fakes, vocabs, desc_table, out_dir=out_dir)
    # Re-save checkpoints with the vocab/desc bundle so evaluate is self-contained.
    for name in results:
        for seed in spec.seeds:
            ckpt_path = os.path.join(out_dir, f"checkpoint_{name}_seed{seed}.json")
            params, _ = ModelParams.load(ckpt_path)
            params.save(ckpt_path, extra=_checkpoint_extra(vocabs, desc_table, chash, seed))
    doc = {"config_hash": chash, "tool_version": __version__, "results": results}
    with open(os.path.join(out_dir, "experiment.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"experiment artifacts in {out_dir}", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    params, extra = ModelParams.load(args.checkpoint)
    if not extra:
        raise DataError(f"{args.checkpoint}: checkpoint lacks the vocab/desc bundle")
    vocabs, desc_table = _restore_from_extra(extra)
    graph = load_graph(args.graph, desc_table)
    test = load_resumes(args.test, vocabs)
    augment_cfg = AugmentConfig(**_section(load_config(args.config), "augment")) if args.config else AugmentConfig()
    compiled = compile_resumes(test, vocabs, desc_table, graph, augment_cfg)
    probs = [forward(c, params).prob.value.item() for c in compiled]
    metrics = compute_metrics(probs, [r.label for r in test])
    doc = metrics_document("evaluate", extra.get("config_hash", ""), extra.get("seed", 0), metrics)
    if args.out:
        write_metrics(args.out, doc)
    else:
        print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out or cfg.get("output_dir")
    vocabs = VocabSet()
    real, fakes, desc_table = _load_corpus_bundle(cfg, vocabs)
    if not fakes:
        raise UsageError("ablation needs at least one fake corpus (corpus.fakes)")
    spec = _experiment_pieces(cfg, args.seed)
    if len(fakes) == 1:
        dataset = real + next(iter(fakes.values()))
    else:
        from .evaluation import assemble_combined

        dataset = assemble_combined(real, fakes)
    rows = run_ablation(
        args.family, dataset, spec, vocabs, desc_table, out_dir=out_dir, jobs=args.jobs
    )
    print(json.dumps(rows, sort_keys=True, default=str))
    return 0


def cmd_stats(args) -> int:
    vocabs = VocabSet()
    resumes = load_resumes(args.resumes, vocabs)
    stats = corpus_stats(resumes).to_json()
    stats["count"] = len(resumes)
    stats["tool_version"] = __version__
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(stats, fh, sort_keys=True)
            fh.write("\n")
    else:
        print(json.dumps(stats, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="careergraph", description=__doc__)
    parser.add_argument("--version", action="version", version=f"careergraph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="produce synthetic or oracle-real resumes")
    p.add_argument("--config")
    p.add_argument("--method", choices=["random", "popular", "swapping", "replacing", "markov_real"])
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus", help="source corpus for rule-based methods")
    p.add_argument("--schema", help="career schema JSON for markov_real")
    p.add_argument("--out", required=True)
    p.add_argument("--desc-out", help="also write the schema's title->description mapping")
    p.add_argument("--emb-out", help="also write structured description vectors")
    p.add_argument("--emb-dim", type=int, default=32)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-graph", help="build and serialize the trusted global graph")
    p.add_argument("--real", required=True)
    p.add_argument("--desc-map", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--fallback-dim", type=int, default=64)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="run the experiment protocol from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override: run this single seed")
    p.add_argument("--out", help="output directory (overrides config output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a resume file with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--config", help="optional config for the augment section")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run one ablation family")
    p.add_argument("--config", required=True)
    p.add_argument("--family", required=True, choices=["embedding_size", "hops", "layers", "augmentation"])
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output directory for CSV/JSON tables")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stats", help="corpus statistics as JSON")
    p.add_argument("--resumes", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except CareerGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
