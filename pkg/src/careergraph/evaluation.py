"""Experiment protocol: splits, metrics, per-generator runs, and ablations.

Every run builds its global graph exclusively from the training split's
genuine resumes and asserts the test split contributed nothing to it.  Runs
are deterministic under (spec, seed): identical inputs produce byte-identical
metrics documents.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import statistics
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .augment import AugmentConfig
from .corpus import DescriptionTable, Resume, VocabSet, fallback_embedding
from .errors import DataError, UsageError
from .graph import ALL_LAYERS, build_global_graph, relations_for_layers
from .model import ModelConfig, _eval_probs, compile_resumes, save_training_log, train


@dataclass
class SplitSpec:
    """80/20 test split with 20% of the remainder held out for validation.

    Stratification groups by (label, source) so combined datasets keep every
    generator represented proportionally in each split.
    """

    test_fraction: float = 0.20
    val_fraction_of_train: float = 0.20
    seed: int = 0
    stratify_by_label: bool = True

    def __post_init__(self):
        if not (0.0 < self.test_fraction < 1.0) or not (0.0 < self.val_fraction_of_train < 1.0):
            raise UsageError("split fractions must lie in (0, 1)")


def split(
    dataset: Sequence[Resume], spec: SplitSpec
) -> tuple[list[Resume], list[Resume], list[Resume]]:
    """Deterministic stratified (train, val, test) partition of *dataset*."""
    if not dataset:
        raise DataError("cannot split an empty dataset")
    if spec.stratify_by_label:
        groups: dict[tuple, list[Resume]] = {}
        for r in dataset:
            groups.setdefault((r.label, r.source), []).append(r)
        labels = {r.label for r in dataset}
        if labels != {0, 1}:
            raise DataError(f"stratified split needs both labels, got {sorted(labels)}")
    else:
        groups = {(None, None): list(dataset)}
    rng = np.random.default_rng(spec.seed)
    train_set: list[Resume] = []
    val_set: list[Resume] = []
    test_set: list[Resume] = []
    for key in sorted(groups, key=lambda k: (str(k[0]), str(k[1]))):
        members = groups[key]
        order = rng.permutation(len(members))
        n_test = int(round(len(members) * spec.test_fraction))
        rest = len(members) - n_test
        n_val = int(round(rest * spec.val_fraction_of_train))
        shuffled = [members[i] for i in order]
        test_set.extend(shuffled[:n_test])
        val_set.extend(shuffled[n_test : n_test + n_val])
        train_set.extend(shuffled[n_test + n_val :])
    return train_set, val_set, test_set


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1_positive: float
    f1_micro: float
    threshold: float = 0.5

    def to_json(self) -> dict:
        return {
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "precision": self.precision,
            "recall": self.recall,
            "f1_positive": self.f1_positive,
            "f1_micro": self.f1_micro,
            "threshold": self.threshold,
        }


def compute_metrics(
    probabilities: Sequence[float], labels: Sequence[int], threshold: float = 0.5
) -> Metrics:
    """Hard decisions at *threshold* (>= counts as positive).

    For single-label binary decisions micro-F1 equals accuracy; both the
    positive-class F1 and micro-F1 are reported.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] != y.shape[0]:
        raise UsageError(f"{probs.shape[0]} probabilities vs {y.shape[0]} labels")
    if probs.shape[0] == 0:
        raise DataError("cannot compute metrics of an empty prediction set")
    pred = (probs >= threshold).astype(np.int64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    micro = (tp + tn) / len(y)
    return Metrics(tp, fp, tn, fn, precision, recall, f1, micro, threshold)


# ---------------------------------------------------------------------------
# Experiment assembly
# ---------------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    """One experiment family: per-generator runs plus an optional combined run."""

    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    tau: float = 0.9
    include_combined: bool = True
    per_generator: bool = True

    def to_json(self) -> dict:
        return {
            "seeds": self.seeds,
            "model": asdict(self.model),
            "augment": asdict(self.augment),
            "split": asdict(self.split),
            "tau": self.tau,
            "include_combined": self.include_combined,
            "per_generator": self.per_generator,
        }


def spec_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def assemble_combined(
    real: Sequence[Resume], fake_sources: dict[str, Sequence[Resume]]
) -> list[Resume]:
    """Equal real count; fakes drawn in equal per-source shares (within one)."""
    if not fake_sources:
        raise DataError("combined assembly needs at least one fake source")
    tags = sorted(fake_sources)
    target = len(real)
    base, extra = divmod(target, len(tags))
    combined = list(real)
    for i, tag in enumerate(tags):
        want = base + (1 if i < extra else 0)
        pool = list(fake_sources[tag])
        if len(pool) < want:
            raise DataError(f"fake source {tag!r} has {len(pool)} resumes, need {want}")
        combined.extend(pool[:want])
    return combined


def assert_no_leakage(global_graph, test_set: Sequence[Resume]) -> None:
    """Hard check that no test resume contributed edges to the global graph."""
    contributed = set(global_graph.meta.get("built_from", []))
    overlap = contributed & {r.id for r in test_set}
    if overlap:
        raise DataError(f"test resumes leaked into the global graph: {sorted(overlap)[:5]}")


def _single_run(
    dataset: list[Resume],
    seed: int,
    model_cfg: ModelConfig,
    augment_cfg: AugmentConfig,
    split_spec: SplitSpec,
    tau: float,
    vocabs: VocabSet,
    desc_table: DescriptionTable,
    layers: frozenset[str] = ALL_LAYERS,
    init_vectors: dict | None = None,
) -> tuple[Metrics, list[dict], ModelParams, object]:
    """Split, build the trusted graph, train, evaluate on the test split."""
    sp = replace(split_spec, seed=seed)
    mc = replace(model_cfg, seed=seed)
    ac = replace(augment_cfg, seed=seed)
    train_set, val_set, test_set = split(dataset, sp)
    train_real = [r for r in train_set if r.label == 0]
    if not train_real:
        raise DataError("no genuine resumes in the training split")
    relations = relations_for_layers(layers)
    if ac.mode == "mixed":
        graph = build_global_graph(
            train_set, desc_table, tau=tau, relations=relations, allow_synthetic=True
        )
    else:
        graph = build_global_graph(train_real, desc_table, tau=tau, relations=relations)
    assert_no_leakage(graph, test_set)

    params, log = train(
        train_set, val_set, graph, mc, ac, vocabs, desc_table, init_vectors=init_vectors
    )
    compiled_test = compile_resumes(test_set, vocabs, desc_table, graph, ac)
    probs = _eval_probs(compiled_test, params)
    metrics = compute_metrics(probs, [r.label for r in test_set])
    return metrics, log, params, graph


def run_experiment(
    spec: ExperimentSpec,
    real: list[Resume],
    fake_sources: dict[str, list[Resume]],
    vocabs: VocabSet,
    desc_table: DescriptionTable,
    out_dir: str | None = None,
) -> dict:
    """Per-generator runs and the combined run, each repeated over the seeds.

    Returns {run_name: {"seeds": {seed: metrics-dict}, "mean": .., "std": ..}}
    and writes metrics/log/checkpoint artifacts when *out_dir* is given.
    """
    runs: dict[str, list[Resume]] = {}
    if spec.per_generator:
        for tag in sorted(fake_sources):
            runs[tag] = list(real) + list(fake_sources[tag])
    if spec.include_combined:
        runs["combined"] = assemble_combined(real, fake_sources)
    if not runs:
        raise UsageError("experiment spec enables no runs")
    shash = spec_hash(spec.to_json())
    results: dict[str, dict] = {}
    for name, dataset in runs.items():
        per_seed: dict[int, Metrics] = {}
        for seed in spec.seeds:
            metrics, log, params, graph = _single_run(
                dataset, seed, spec.model, spec.augment, spec.split, spec.tau,
                vocabs, desc_table,
            )
            per_seed[seed] = metrics
            if out_dir:
                _write_run_artifacts(out_dir, name, seed, shash, metrics, log, params, graph)
        f1s = [m.f1_positive for m in per_seed.values()]
        results[name] = {
            "seeds": {s: m.to_json() for s, m in per_seed.items()},
            "f1_positive_mean": statistics.fmean(f1s),
            "f1_positive_std": statistics.pstdev(f1s) if len(f1s) > 1 else 0.0,
            "f1_positive_median": statistics.median(f1s),
        }
    if out_dir:
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump({"spec_hash": shash, "runs": results}, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return results


def metrics_document(run_id: str, shash: str, seed: int, metrics: Metrics) -> dict:
    doc = {
        "run_id": run_id,
        "spec_hash": shash,
        "seed": seed,
        "tool_version": __version__,
        "f1_positive": metrics.f1_positive,
        "f1_micro": metrics.f1_micro,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "confusion": metrics.to_json()["confusion"],
        "threshold": metrics.threshold,
    }
    return doc


def write_metrics(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _write_run_artifacts(out_dir, name, seed, shash, metrics, log, params, graph) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_metrics(
        os.path.join(out_dir, f"metrics_{name}_seed{seed}.json"),
        metrics_document(name, shash, seed, metrics),
    )
    save_training_log(log, os.path.join(out_dir, f"train_log_{name}_seed{seed}.jsonl"))
    params.save(os.path.join(out_dir, f"checkpoint_{name}_seed{seed}.json"))


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

ABLATION_FAMILIES = ("embedding_size", "hops", "layers", "augmentation")

# Table order mirrors the layer-ablation protocol: singles, pairs, all-intra,
# then the full graph with cross-layer relations.
LAYER_CONFIGS: list[tuple[str, frozenset[str]]] = [
    ("JT", frozenset({"title"})),
    ("C", frozenset({"company"})),
    ("JD", frozenset({"description"})),
    ("JT+C", frozenset({"title", "company"})),
    ("JT+JD", frozenset({"title", "description"})),
    ("JT+C+JD", frozenset({"title", "company", "description"})),
    ("All", ALL_LAYERS),
]


@dataclass
class _AblationCell:
    family: str
    cell: str
    dataset: list[Resume]
    seeds: list[int]
    model: ModelConfig
    augment: AugmentConfig
    split: SplitSpec
    tau: float
    vocabs: VocabSet
    desc_table: DescriptionTable
    layers: frozenset[str] = ALL_LAYERS
    init_vectors: dict | None = None
    note: str = ""


def _run_ablation_cell(cell: _AblationCell) -> dict:
    f1s = []
    for seed in cell.seeds:
        metrics, _, _, _ = _single_run(
            cell.dataset, seed, cell.model, cell.augment, cell.split, cell.tau,
            cell.vocabs, cell.desc_table, layers=cell.layers, init_vectors=cell.init_vectors,
        )
        f1s.append(metrics.f1_positive)
    row = {
        "family": cell.family,
        "cell": cell.cell,
        "f1_positive_mean": statistics.fmean(f1s),
        "f1_positive_median": statistics.median(f1s),
        "f1_positive_std": statistics.pstdev(f1s) if len(f1s) > 1 else 0.0,
        "per_seed": dict(zip(cell.seeds, f1s)),
    }
    if cell.note:
        row["note"] = cell.note
    return row


def run_ablation(
    family: str,
    dataset: list[Resume],
    spec: ExperimentSpec,
    vocabs: VocabSet,
    desc_table: DescriptionTable,
    embedding_sizes: Sequence[int] = (32, 64, 128, 256),
    hop_values: Sequence[int] = (0, 1, 2, 3),
    global_emb_vectors: dict | None = None,
    out_dir: str | None = None,
    jobs: int = 1,
) -> list[dict]:
    """One ablation family over the given dataset; one row per configuration.

    hops=0 is run as augmentation mode "none" (the two pipelines coincide by
    construction).  The global-embedding augmentation variant is approximate:
    tables start from supplied (or deterministic fallback) vectors and no
    structural augmentation is applied.  jobs > 1 runs cells in parallel
    processes; results are identical to a sequential run.
    """
    if family not in ABLATION_FAMILIES:
        raise UsageError(f"unknown ablation family {family!r}")

    def cell(name: str, model_cfg, augment_cfg, layers=ALL_LAYERS, init_vectors=None, note=""):
        return _AblationCell(
            family, name, dataset, spec.seeds, model_cfg, augment_cfg, spec.split,
            spec.tau, vocabs, desc_table, layers, init_vectors, note,
        )

    cells: list[_AblationCell] = []
    if family == "embedding_size":
        cells = [cell(str(d), replace(spec.model, d=d), spec.augment) for d in embedding_sizes]
    elif family == "hops":
        for hop in hop_values:
            if hop == 0:
                cfg = replace(spec.augment, mode="none")
            else:
                cfg = replace(spec.augment, mode="structural", hop_threshold=hop)
            cells.append(cell(str(hop), spec.model, cfg))
    elif family == "layers":
        cells = [cell(name, spec.model, spec.augment, layers=ls) for name, ls in LAYER_CONFIGS]
    elif family == "augmentation":
        for mode in ("structural", "none", "random", "mixed"):
            cells.append(cell(mode, spec.model, replace(spec.augment, mode=mode)))
        vectors = global_emb_vectors
        if vectors is None:
            d = spec.model.d
            vectors = {
                "title": {tok: fallback_embedding(tok, d) for tok in vocabs.titles.tokens()},
                "company": {tok: fallback_embedding(tok, d) for tok in vocabs.companies.tokens()},
            }
        cells.append(
            cell(
                "global_emb",
                spec.model,
                replace(spec.augment, mode="none"),
                init_vectors=vectors,
                note="approximate: file-initialized embeddings, no augmentation",
            )
        )

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_ablation_cell, cells))
    else:
        rows = [_run_ablation_cell(c) for c in cells]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_ablation_csv(rows, os.path.join(out_dir, f"ablation_{family}.csv"))
        with open(os.path.join(out_dir, f"ablation_{family}.json"), "w", encoding="utf-8") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return rows


def write_ablation_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "cell", "f1_positive_mean", "f1_positive_median", "f1_positive_std"])
        for row in rows:
            writer.writerow(
                [
                    row["family"],
                    row["cell"],
                    f"{row['f1_positive_mean']:.6f}",
                    f"{row['f1_positive_median']:.6f}",
                    f"{row['f1_positive_std']:.6f}",
                ]
            )
