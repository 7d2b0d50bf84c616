"""The detection network and its training loop.

Pipeline per resume: user subgraph -> global augmentation -> typed embedding
init -> L relational message-passing layers with duration-aware worked_at
messages -> type embeddings -> self-attention subgraph encoder -> mean
pooling -> sigmoid head.  Trained with BCE and Adam, early stopping on
validation loss.

Subgraphs are compiled once into index arrays and row-normalized adjacency
matrices per relation; epochs then run pure numerics on the tape.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from . import __version__, autodiff as ad
from .augment import AugmentConfig, augment_subgraph
from .autodiff import AdamState, Tensor, adam_step, backward, constant, parameter
from .corpus import DescriptionTable, Resume, VocabSet
from .errors import DataError, NumericError, UsageError
from .graph import (
    DURATION_RELATIONS,
    HeteroGraph,
    NodeKind,
    Relation,
    Subgraph,
    build_user_subgraph,
    message_relations,
)

KIND_INDEX = {NodeKind.TITLE: 0, NodeKind.COMPANY: 1, NodeKind.DESCRIPTION: 2}


@dataclass
class ModelConfig:
    d: int = 128  # node embedding dimension
    d_d: int = 16  # duration embedding dimension
    layers: int = 2  # message-passing layers
    heads: int = 4
    encoder_blocks: int = 1
    dropout: float = 0.1
    epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    lr: float = 0.005
    lr_decay: float = 0.5
    lr_patience: int = 5
    lr_floor: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise UsageError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.layers < 1:
            raise UsageError("need at least one message-passing layer")
        if not (0.0 <= self.dropout < 1.0):
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise UsageError("epochs, patience and batch_size must be >= 1")


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_out, fan_in))


class ModelParams:
    """All trainable state, keyed by name.

    Relation weights exist per enabled relation kind per layer; worked_at
    kinds are (d, d + d_d) so the duration embedding concatenates into the
    message, every other kind is (d, d).
    """

    def __init__(
        self,
        config: ModelConfig,
        n_titles: int,
        n_companies: int,
        d_desc: int,
        relations: Sequence[Relation],
        init_vectors: dict[str, dict[str, np.ndarray]] | None = None,
        vocabs: VocabSet | None = None,
    ):
        self.config = config
        self.n_titles = n_titles
        self.n_companies = n_companies
        self.d_desc = d_desc
        self.relations = list(relations)
        rng = np.random.default_rng([config.seed, 7])
        d, dd = config.d, config.d_d
        t: dict[str, Tensor] = {}
        t["title_emb"] = parameter(rng.normal(0.0, d**-0.5, size=(n_titles, d)), "title_emb")
        t["company_emb"] = parameter(
            rng.normal(0.0, d**-0.5, size=(n_companies, d)), "company_emb"
        )
        t["desc_proj_w"] = parameter(_glorot(rng, d, d_desc), "desc_proj_w")
        t["desc_proj_b"] = parameter(np.zeros((1, d)), "desc_proj_b")
        t["dur_w"] = parameter(rng.normal(0.0, 0.5, size=(1, dd)), "dur_w")
        t["dur_b"] = parameter(np.zeros((1, dd)), "dur_b")
        t["type_emb"] = parameter(rng.normal(0.0, d**-0.5, size=(3, d)), "type_emb")
        for layer in range(config.layers):
            for rel in self.relations:
                fan_in = d + dd if rel in DURATION_RELATIONS else d
                name = f"rel_{rel.value}_{layer}"
                t[name] = parameter(_glorot(rng, d, fan_in), name)
        for b in range(config.encoder_blocks):
            t[f"enc{b}_ln1_g"] = parameter(np.ones((1, d)), f"enc{b}_ln1_g")
            t[f"enc{b}_ln1_b"] = parameter(np.zeros((1, d)), f"enc{b}_ln1_b")
            # no key bias: it cancels inside the row softmax (zero gradient)
            for proj in ("wq", "wk", "wv", "wo"):
                t[f"enc{b}_{proj}"] = parameter(_glorot(rng, d, d), f"enc{b}_{proj}")
                if proj != "wk":
                    t[f"enc{b}_b{proj[1]}"] = parameter(np.zeros((1, d)), f"enc{b}_b{proj[1]}")
            t[f"enc{b}_ln2_g"] = parameter(np.ones((1, d)), f"enc{b}_ln2_g")
            t[f"enc{b}_ln2_b"] = parameter(np.zeros((1, d)), f"enc{b}_ln2_b")
            t[f"enc{b}_ff_w1"] = parameter(_glorot(rng, 2 * d, d), f"enc{b}_ff_w1")
            t[f"enc{b}_ff_b1"] = parameter(np.zeros((1, 2 * d)), f"enc{b}_ff_b1")
            t[f"enc{b}_ff_w2"] = parameter(_glorot(rng, d, 2 * d), f"enc{b}_ff_w2")
            t[f"enc{b}_ff_b2"] = parameter(np.zeros((1, d)), f"enc{b}_ff_b2")
        t["head_w"] = parameter(_glorot(rng, d, 1).reshape(d, 1), "head_w")
        t["head_b"] = parameter(np.zeros((1, 1)), "head_b")
        self.tensors = t
        if init_vectors is not None:
            if vocabs is None:
                raise UsageError("init_vectors requires the vocabularies for token lookup")
            self._install_init_vectors(init_vectors, vocabs)

    def _install_init_vectors(
        self, init_vectors: dict[str, dict[str, np.ndarray]], vocabs: VocabSet
    ) -> None:
        """Overwrite embedding-table rows from externally supplied vectors."""
        d = self.config.d
        for table_name, vocab in (("title_emb", vocabs.titles), ("company_emb", vocabs.companies)):
            supplied = init_vectors.get(table_name.split("_")[0], {})
            table = self.tensors[table_name].value
            for token, vec in supplied.items():
                if vec.shape[0] != d:
                    raise DataError(
                        f"initial embedding for {token!r} has dim {vec.shape[0]}, expected {d}"
                    )
                if token in vocab:
                    table[vocab.index(token)] = vec

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, value in snap.items():
            self.tensors[name].value[...] = value

    # -- checkpoint io -----------------------------------------------------

    def to_checkpoint(self, extra: dict | None = None) -> dict:
        doc = {
            "format_version": 1,
            "tool_version": __version__,
            "config": asdict(self.config),
            "relations": [r.value for r in self.relations],
            "n_titles": self.n_titles,
            "n_companies": self.n_companies,
            "d_desc": self.d_desc,
            "params": {
                name: {"shape": list(t.value.shape), "data": t.value.reshape(-1).tolist()}
                for name, t in sorted(self.tensors.items())
            },
        }
        if extra:
            doc["extra"] = extra
        return doc

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "ModelParams":
        if doc.get("format_version") != 1:
            raise DataError(f"unsupported checkpoint version {doc.get('format_version')!r}")
        config = ModelConfig(**doc["config"])
        params = cls(
            config,
            n_titles=doc["n_titles"],
            n_companies=doc["n_companies"],
            d_desc=doc["d_desc"],
            relations=[Relation(r) for r in doc["relations"]],
        )
        for name, spec in doc["params"].items():
            if name not in params.tensors:
                raise DataError(f"unknown parameter {name!r} in checkpoint")
            arr = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
            if arr.shape != params.tensors[name].value.shape:
                raise DataError(f"checkpoint shape mismatch for {name!r}")
            params.tensors[name].value[...] = arr
        return params

    def save(self, path: str, extra: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(extra), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> tuple["ModelParams", dict]:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls.from_checkpoint(doc), doc.get("extra", {})


# ---------------------------------------------------------------------------
# Subgraph compilation
# ---------------------------------------------------------------------------


@dataclass
class CompiledSubgraph:
    """Numeric view of an augmented subgraph, reusable across epochs."""

    resume_id: str
    label: int
    n: int
    kind_idx: np.ndarray  # (n,) 0=title 1=company 2=description
    perm: np.ndarray  # encoder position -> row in the stacked block matrix
    title_ids: np.ndarray
    company_ids: np.ndarray
    desc_vecs: np.ndarray  # (n_desc, d_desc)
    rel_mats: list[tuple[str, sparse.csr_matrix, sparse.csr_matrix]]
    dur_stats: dict[str, np.ndarray]  # kind -> (n, 2): mean log duration, indicator


def compile_subgraph(sub: Subgraph, d_desc: int) -> CompiledSubgraph:
    order = sub.ordered_nodes()
    if not order:
        raise DataError(f"subgraph for resume {sub.resume_id!r} is empty")
    pos = {node: i for i, node in enumerate(order)}
    n = len(order)
    kind_idx = np.array([KIND_INDEX[node[0]] for node in order], dtype=np.int64)

    title_ids, company_ids, desc_rows = [], [], []
    block_row: dict[tuple, int] = {}
    for node in order:
        kind, key = node
        if kind is NodeKind.TITLE:
            block_row[node] = len(title_ids)
            title_ids.append(key)
    for node in order:
        kind, key = node
        if kind is NodeKind.COMPANY:
            block_row[node] = len(company_ids)
            company_ids.append(key)
    n_titles, n_companies = len(title_ids), len(company_ids)
    for node in order:
        kind, key = node
        if kind is NodeKind.DESCRIPTION:
            vec = sub.graph.desc_vectors.get(key)
            if vec is None:
                raise DataError(
                    f"no description vector for desc id {key} in resume {sub.resume_id!r}"
                )
            block_row[node] = len(desc_rows)
            desc_rows.append(vec)
    perm = np.empty(n, dtype=np.int64)
    for i, node in enumerate(order):
        offset = 0
        if node[0] is NodeKind.COMPANY:
            offset = n_titles
        elif node[0] is NodeKind.DESCRIPTION:
            offset = n_titles + n_companies
        perm[i] = offset + block_row[node]

    rel_mats = []
    dur_stats: dict[str, np.ndarray] = {}
    for rel in message_relations(sub.graph.relations):
        rows, cols = [], []
        indeg = np.zeros(n)
        log_dur_sum = np.zeros(n)
        for src, dst, attr in sub.graph.edges(rel):
            v, u = pos[dst], pos[src]
            rows.append(v)
            cols.append(u)
            indeg[v] += 1
            if rel in DURATION_RELATIONS:
                log_dur_sum[v] += math.log(attr.duration)
        if not rows:
            continue
        weights = 1.0 / indeg[np.array(rows)]
        mat = sparse.csr_matrix(
            (weights, (np.array(rows), np.array(cols))), shape=(n, n), dtype=np.float64
        )
        rel_mats.append((rel.value, mat, mat.T.tocsr()))
        if rel in DURATION_RELATIONS:
            has = indeg > 0
            mean_log = np.where(has, log_dur_sum / np.maximum(indeg, 1), 0.0)
            dur_stats[rel.value] = np.column_stack([mean_log, has.astype(np.float64)])
    if d_desc and desc_rows:
        desc_vecs = np.stack(desc_rows).astype(np.float64)
    else:
        desc_vecs = np.zeros((0, d_desc))
    return CompiledSubgraph(
        resume_id=sub.resume_id,
        label=sub.label,
        n=n,
        kind_idx=kind_idx,
        perm=perm,
        title_ids=np.array(title_ids, dtype=np.int64),
        company_ids=np.array(company_ids, dtype=np.int64),
        desc_vecs=desc_vecs,
        rel_mats=rel_mats,
        dur_stats=dur_stats,
    )


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


@dataclass
class ForwardState:
    layer_embeddings: list[Tensor]
    pooled: Tensor
    logit: Tensor
    prob: Tensor


class _DropCtx:
    """Hands every dropout call site a distinct deterministic seed."""

    def __init__(self, base: tuple[int, ...], rate: float, train: bool):
        self.base = tuple(int(x) for x in base)
        self.rate = rate
        self.train = train
        self.counter = 0

    def apply(self, x: Tensor) -> Tensor:
        seed = list(self.base) + [self.counter]
        self.counter += 1
        return ad.dropout(x, self.rate, self.train, seed)


def init_embeddings(compiled: CompiledSubgraph, params: ModelParams) -> Tensor:
    """h^(0): embedding-table rows for titles/companies, projected description
    vectors for description nodes, assembled in encoder order."""
    blocks: list[Tensor] = []
    if compiled.title_ids.size:
        blocks.append(ad.gather_rows(params.tensors["title_emb"], compiled.title_ids))
    if compiled.company_ids.size:
        blocks.append(ad.gather_rows(params.tensors["company_emb"], compiled.company_ids))
    if compiled.desc_vecs.shape[0]:
        blocks.append(
            ad.linear(
                constant(compiled.desc_vecs),
                params.tensors["desc_proj_w"],
                params.tensors["desc_proj_b"],
            )
        )
    stacked = blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=0)
    return ad.gather_rows(stacked, compiled.perm)


def duration_embed(duration_months: float, params: ModelParams) -> Tensor:
    """Affine map of log duration into the duration embedding space."""
    if duration_months < 1:
        raise DataError(f"duration must be >= 1 month, got {duration_months}")
    scaled = ad.scale(params.tensors["dur_w"], math.log(duration_months))
    return ad.add(scaled, params.tensors["dur_b"])


def message_passing_layer(
    compiled: CompiledSubgraph, h: Tensor, params: ModelParams, layer: int
) -> Tensor:
    """One relational aggregation step.

    h_v <- ReLU( sum_r sum_{u in N_r(v)} |N_r(v)|^-1 * msg_r(u) ), where the
    message is W_r h_u for plain relations and W_r [h_u || dur_embed] for
    worked_at and its inverse.  Nodes with no in-neighbors get the zero
    vector.

    The per-relation terms are computed as one stacked product:
    sum_r (A_r h) W_r^T = [A_1 h || A_2 h || ...] [W_1 || W_2 || ...]^T.
    """
    d, dd = params.config.d, params.config.d_d
    if not compiled.rel_mats:
        return ad.relu(constant(np.zeros((compiled.n, d))))
    aggs: list[Tensor] = []
    weights: list[Tensor] = []
    dur_vecs: list[Tensor] = []
    dur_weights: list[Tensor] = []
    dur_wb: Tensor | None = None
    for kind, mat, mat_t in compiled.rel_mats:
        name = f"rel_{kind}_{layer}"
        w = params.tensors.get(name)
        if w is None:
            raise UsageError(f"missing relation weight {name!r}")
        aggs.append(ad.spmm(mat, h, mat_t))
        if kind in compiled.dur_stats:
            weights.append(ad.slice_cols(w, 0, d))
            dur_weights.append(ad.slice_cols(w, d, d + dd))
            if dur_wb is None:
                dur_wb = ad.concat([params.tensors["dur_w"], params.tensors["dur_b"]], axis=0)
            dur_vecs.append(ad.matmul(constant(compiled.dur_stats[kind]), dur_wb))
        else:
            weights.append(w)
    total = ad.matmul_nt(
        aggs[0] if len(aggs) == 1 else ad.concat(aggs, axis=1),
        weights[0] if len(weights) == 1 else ad.concat(weights, axis=1),
    )
    if dur_vecs:
        dur_term = ad.matmul_nt(
            dur_vecs[0] if len(dur_vecs) == 1 else ad.concat(dur_vecs, axis=1),
            dur_weights[0] if len(dur_weights) == 1 else ad.concat(dur_weights, axis=1),
        )
        total = ad.add(total, dur_term)
    return ad.relu(total)


def _encoder_block(
    x: Tensor, params: ModelParams, block: int, drop: _DropCtx
) -> Tensor:
    cfg = params.config
    t = params.tensors
    d = cfg.d
    dh = d // cfg.heads
    xn = ad.add(
        ad.mul(ad.layer_norm_rows(x), t[f"enc{block}_ln1_g"]), t[f"enc{block}_ln1_b"]
    )
    q = ad.linear(xn, t[f"enc{block}_wq"], t[f"enc{block}_bq"])
    k = ad.matmul_nt(xn, t[f"enc{block}_wk"])
    v = ad.linear(xn, t[f"enc{block}_wv"], t[f"enc{block}_bv"])
    heads = []
    for i in range(cfg.heads):
        qi = ad.slice_cols(q, i * dh, (i + 1) * dh)
        ki = ad.slice_cols(k, i * dh, (i + 1) * dh)
        vi = ad.slice_cols(v, i * dh, (i + 1) * dh)
        scores = ad.scale(ad.matmul_nt(qi, ki), 1.0 / math.sqrt(dh))
        heads.append(ad.matmul(ad.softmax_rows(scores), vi))
    attn = ad.linear(
        heads[0] if len(heads) == 1 else ad.concat(heads, axis=1),
        t[f"enc{block}_wo"],
        t[f"enc{block}_bo"],
    )
    x = ad.add(x, drop.apply(attn))
    xn2 = ad.add(
        ad.mul(ad.layer_norm_rows(x), t[f"enc{block}_ln2_g"]), t[f"enc{block}_ln2_b"]
    )
    ff = ad.linear(
        ad.relu(ad.linear(xn2, t[f"enc{block}_ff_w1"], t[f"enc{block}_ff_b1"])),
        t[f"enc{block}_ff_w2"],
        t[f"enc{block}_ff_b2"],
    )
    return ad.add(x, ff)


def _encode_logit(
    compiled: CompiledSubgraph,
    h_final: Tensor,
    params: ModelParams,
    drop: _DropCtx | None = None,
) -> tuple[Tensor, Tensor]:
    if compiled.n == 0:
        raise DataError("cannot classify an empty subgraph")
    drop = drop or _DropCtx((0,), params.config.dropout, train=False)
    t = params.tensors
    x = ad.add(h_final, ad.gather_rows(t["type_emb"], compiled.kind_idx))
    for block in range(params.config.encoder_blocks):
        x = _encoder_block(x, params, block, drop)
    z = ad.mean_rows(x)
    logit = ad.add(ad.matmul(z, t["head_w"]), t["head_b"])
    return z, logit


def encode_and_classify(
    compiled: CompiledSubgraph,
    h_final: Tensor,
    params: ModelParams,
    drop: _DropCtx | None = None,
) -> tuple[Tensor, Tensor]:
    """Type embeddings + self-attention encoder + mean pooling + sigmoid head."""
    z, logit = _encode_logit(compiled, h_final, params, drop)
    return z, ad.sigmoid(logit)


def forward(
    compiled: CompiledSubgraph,
    params: ModelParams,
    train: bool = False,
    drop_base: tuple[int, ...] = (0,),
) -> ForwardState:
    cfg = params.config
    drop = _DropCtx(drop_base, cfg.dropout, train)
    h = init_embeddings(compiled, params)
    embeddings = [h]
    for layer in range(cfg.layers):
        h = message_passing_layer(compiled, drop.apply(h), params, layer)
        embeddings.append(h)
    z, logit = _encode_logit(compiled, h, params, drop)
    return ForwardState(
        layer_embeddings=embeddings, pooled=z, logit=logit, prob=ad.sigmoid(logit)
    )


def bce_loss(predictions: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if predictions.value.shape[0] != y.shape[0]:
        raise UsageError(
            f"{predictions.value.shape[0]} predictions vs {y.shape[0]} labels"
        )
    p = ad.clamp(predictions, 1e-7, 1.0 - 1e-7)
    pos = ad.mul(constant(y), ad.log(p))
    one_minus_p = ad.add(constant(np.ones_like(y)), ad.scale(p, -1.0))
    neg = ad.mul(constant(1.0 - y), ad.log(one_minus_p))
    return ad.scale(ad.mean_all(ad.add(pos, neg)), -1.0)


# ---------------------------------------------------------------------------
# Training and inference
# ---------------------------------------------------------------------------


def compile_resumes(
    resumes: Sequence[Resume],
    vocabs: VocabSet,
    desc_table: DescriptionTable,
    global_graph: HeteroGraph,
    augment_cfg: AugmentConfig,
) -> list[CompiledSubgraph]:
    out = []
    for r in resumes:
        sub = build_user_subgraph(r, vocabs, desc_table, relations=global_graph.relations)
        sub = augment_subgraph(sub, global_graph, augment_cfg)
        out.append(compile_subgraph(sub, desc_table.dim))
    return out


def _eval_probs(compiled: Sequence[CompiledSubgraph], params: ModelParams) -> np.ndarray:
    return np.array([forward(c, params).prob.value.item() for c in compiled])


def train(
    train_set: Sequence[Resume],
    val_set: Sequence[Resume],
    global_graph: HeteroGraph,
    model_cfg: ModelConfig,
    augment_cfg: AugmentConfig,
    vocabs: VocabSet,
    desc_table: DescriptionTable,
    init_vectors: dict | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Mini-batch Adam with early stopping; returns best-validation params.

    Stopping follows validation loss (no improvement for cfg.patience
    epochs); the returned snapshot is the best validation epoch by micro-F1
    with ties broken by lower loss, then earlier epoch.  The log holds one
    record per epoch: train_loss, val_loss, val_f1, val_f1_micro, lr.
    *init_vectors* optionally seeds the title/company embedding tables from
    externally supplied vectors (the global-embedding ablation variant).
    """
    from .evaluation import compute_metrics  # local import, avoids module cycle

    if not train_set or not val_set:
        raise DataError("train and validation splits must be non-empty")
    compiled_train = compile_resumes(train_set, vocabs, desc_table, global_graph, augment_cfg)
    compiled_val = compile_resumes(val_set, vocabs, desc_table, global_graph, augment_cfg)
    train_labels = np.array([r.label for r in train_set], dtype=np.float64)
    val_labels = np.array([r.label for r in val_set], dtype=np.int64)

    params = ModelParams(
        model_cfg,
        n_titles=len(vocabs.titles),
        n_companies=len(vocabs.companies),
        d_desc=desc_table.dim,
        relations=message_relations(global_graph.relations),
        init_vectors=init_vectors,
        vocabs=vocabs if init_vectors is not None else None,
    )
    adam = AdamState(
        lr=model_cfg.lr,
        decay=model_cfg.lr_decay,
        plateau_patience=model_cfg.lr_patience,
        lr_floor=model_cfg.lr_floor,
    )
    log: list[dict] = []
    best_val = math.inf  # drives early stopping (val loss)
    best_key = (-math.inf, math.inf)  # drives checkpoint choice (val F1, then loss)
    best_snap = params.snapshot()
    best_epoch = 0
    stale = 0
    for epoch in range(1, model_cfg.epochs + 1):
        rng = np.random.default_rng([model_cfg.seed, 1000 + epoch])
        order = rng.permutation(len(compiled_train))
        total = 0.0
        for start in range(0, len(order), model_cfg.batch_size):
            batch = order[start : start + model_cfg.batch_size]
            params.zero_grads()
            probs = [
                forward(
                    compiled_train[i],
                    params,
                    train=True,
                    drop_base=(model_cfg.seed, epoch, int(i)),
                ).prob
                for i in batch
            ]
            preds = probs[0] if len(probs) == 1 else ad.concat(probs, axis=0)
            loss = bce_loss(preds, train_labels[batch])
            if not np.isfinite(loss.value):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(batch starting at {start})"
                )
            backward(loss)
            adam_step(params.tensors, adam)
            total += float(loss.value) * len(batch)
        train_loss = total / len(compiled_train)
        val_probs = _eval_probs(compiled_val, params)
        val_loss = float(
            bce_loss(constant(val_probs.reshape(-1, 1)), val_labels.astype(np.float64)).value
        )
        val_metrics = compute_metrics(val_probs, val_labels)
        adam.note_validation(val_loss)
        log.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "val_f1": val_metrics.f1_positive,
                "val_f1_micro": val_metrics.f1_micro,
                "lr": adam.lr,
            }
        )
        # checkpoint selection tracks the reported metric (micro-F1, i.e.
        # balanced accuracy here); stopping tracks validation loss
        key = (val_metrics.f1_micro, -val_loss)
        if key > best_key:
            best_key = key
            best_snap = params.snapshot()
            best_epoch = epoch
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= model_cfg.patience:
                break
    params.restore(best_snap)
    if log:
        log[-1]["best_epoch"] = best_epoch
    return params, log


def predict(
    resume: Resume,
    vocabs: VocabSet,
    desc_table: DescriptionTable,
    global_graph: HeteroGraph,
    params: ModelParams,
    augment_cfg: AugmentConfig,
) -> float:
    """Probability that *resume* is machine-generated (dropout disabled)."""
    compiled = compile_resumes([resume], vocabs, desc_table, global_graph, augment_cfg)[0]
    return forward(compiled, params).prob.value.item()


def save_training_log(log: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True))
            fh.write("\n")
