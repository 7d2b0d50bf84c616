import math

import numpy as np
import pytest

from careergraph import autodiff as ad
from careergraph import model as M
from careergraph.augment import AugmentConfig, augment_subgraph
from careergraph.autodiff import backward, constant, grad_check
from careergraph.corpus import VocabSet
from careergraph.errors import DataError, UsageError
from careergraph.generators import GeneratorConfig, gen_markov_real, gen_random
from careergraph.graph import (
    NodeKind,
    Relation,
    build_global_graph,
    build_user_subgraph,
    message_relations,
    relations_for_layers,
)
from careergraph.model import (
    CompiledSubgraph,
    ModelConfig,
    ModelParams,
    bce_loss,
    compile_resumes,
    compile_subgraph,
    duration_embed,
    encode_and_classify,
    forward,
    init_embeddings,
    message_passing_layer,
    predict,
    train,
)

from conftest import mk_desc_table, mk_resume


def _params_for(vocabs, table, relations, **cfg_kw):
    cfg_kw.setdefault("d", 8)
    cfg_kw.setdefault("d_d", 4)
    cfg_kw.setdefault("heads", 2)
    cfg = ModelConfig(**cfg_kw)
    return ModelParams(
        cfg,
        n_titles=len(vocabs.titles),
        n_companies=len(vocabs.companies),
        d_desc=table.dim,
        relations=message_relations(relations),
    )


def _compiled(vocabs, table, resume, relations=None):
    relations = relations if relations is not None else frozenset(
        {Relation.TITLE_TRANSITION, Relation.COMPANY_TRANSITION, Relation.DESC_SIMILAR,
         Relation.WORKED_AT, Relation.HAS_DESCRIPTION}
    )
    sub = build_user_subgraph(resume, vocabs, table, relations=relations)
    return sub, compile_subgraph(sub, table.dim)


# -- init_embeddings -------------------------------------------------------------


def test_unknown_company_uses_unk_row(vocabs):
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 3)])
    table = mk_desc_table(vocabs)
    vocabs.freeze()
    unseen = mk_resume(vocabs, "u", 0, [("A", "never seen gmbh", 4)])
    assert unseen.entries[0].company_id == vocabs.companies.unk_index
    sub, compiled = _compiled(vocabs, table, unseen)
    params = _params_for(vocabs, table, sub.graph.relations)
    h0 = init_embeddings(compiled, params)
    order = sub.ordered_nodes()
    pos = order.index((NodeKind.COMPANY, vocabs.companies.unk_index))
    assert np.array_equal(h0.value[pos], params.tensors["company_emb"].value[0])


def test_same_title_shares_rows(vocabs):
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 3), ("B", "Y", 4), ("A", "Z", 5)])
    table = mk_desc_table(vocabs)
    sub, compiled = _compiled(vocabs, table, resume)
    params = _params_for(vocabs, table, sub.graph.relations)
    h0 = init_embeddings(compiled, params)
    a = vocabs.titles.index("A")
    row = params.tensors["title_emb"].value[a]
    pos = sub.ordered_nodes().index((NodeKind.TITLE, a))
    assert np.array_equal(h0.value[pos], row)


def test_description_projection_hand_computed(vocabs):
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 3)])
    table = mk_desc_table(vocabs, dim=2)
    sub, compiled = _compiled(vocabs, table, resume)
    params = _params_for(vocabs, table, sub.graph.relations, d=2, d_d=2, heads=1)
    w = np.array([[1.0, 2.0], [-0.5, 0.25]])
    b = np.array([[0.1, -0.2]])
    params.tensors["desc_proj_w"].value[...] = w
    params.tensors["desc_proj_b"].value[...] = b
    h0 = init_embeddings(compiled, params)
    entry = table.entry(vocabs.titles.index("A"))
    expected = w @ entry.vector + b[0]
    pos = sub.ordered_nodes().index((NodeKind.DESCRIPTION, entry.desc_id))
    assert np.allclose(h0.value[pos], expected, atol=1e-14)


# -- duration embedding ------------------------------------------------------------


def test_duration_embed_one_month_is_bias(vocabs):
    table = mk_desc_table(vocabs)
    params = _params_for(vocabs, table, frozenset({Relation.WORKED_AT}))
    out = duration_embed(1, params)
    assert np.array_equal(out.value, params.tensors["dur_b"].value)


def test_duration_embed_log_linearity(vocabs):
    table = mk_desc_table(vocabs)
    params = _params_for(vocabs, table, frozenset({Relation.WORKED_AT}))
    e12 = duration_embed(12, params).value
    e24 = duration_embed(24, params).value
    w = params.tensors["dur_w"].value
    assert np.allclose(e24 - e12, w * math.log(2), atol=1e-12)
    with pytest.raises(DataError):
        duration_embed(0, params)


def test_duration_embed_gradient(vocabs):
    table = mk_desc_table(vocabs)
    params = _params_for(vocabs, table, frozenset({Relation.WORKED_AT}))
    tensors = {"dur_w": params.tensors["dur_w"], "dur_b": params.tensors["dur_b"]}
    err = grad_check(lambda: ad.mean_all(duration_embed(7, params)), tensors)
    assert err < 1e-9


# -- message passing ---------------------------------------------------------------


def test_isolated_node_gets_zero_vector(vocabs):
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 3)])
    table = mk_desc_table(vocabs)
    # title-transition layer only: a 1-entry resume has no transition edges
    rels = relations_for_layers({"title"})
    sub, compiled = _compiled(vocabs, table, resume, relations=rels)
    params = _params_for(vocabs, table, rels)
    h0 = init_embeddings(compiled, params)
    h1 = message_passing_layer(compiled, h0, params, 0)
    assert np.array_equal(h1.value, np.zeros_like(h1.value))


def test_single_relation_identity_weight_passes_neighbor(vocabs):
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 1), ("B", "Y", 1)])
    table = mk_desc_table(vocabs)
    rels = relations_for_layers({"title"})
    sub, compiled = _compiled(vocabs, table, resume, relations=rels)
    params = _params_for(vocabs, table, rels, d=4, d_d=2, heads=1)
    params.tensors["rel_title_transition_0"].value[...] = np.eye(4)
    params.tensors["rel_inv_title_transition_0"].value[...] = 0.0
    h0 = init_embeddings(compiled, params)
    h1 = message_passing_layer(compiled, h0, params, 0)
    order = sub.ordered_nodes()
    a = order.index((NodeKind.TITLE, vocabs.titles.index("A")))
    b = order.index((NodeKind.TITLE, vocabs.titles.index("B")))
    assert np.allclose(h1.value[b], np.maximum(h0.value[a], 0.0), atol=1e-14)
    assert np.array_equal(h1.value[a], np.zeros(4))


def test_message_passing_matches_hand_computation(vocabs):
    # two entries at the same company, distinct durations: exercises relation
    # summing, 1/|N| averaging, and duration concatenation
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 2), ("B", "X", 8)])
    table = mk_desc_table(vocabs, dim=2)
    sub, compiled = _compiled(vocabs, table, resume)
    params = _params_for(vocabs, table, sub.graph.relations, d=2, d_d=2, heads=1)
    t = params.tensors

    h0 = init_embeddings(compiled, params)
    h1 = message_passing_layer(compiled, h0, params, 0)

    order = sub.ordered_nodes()
    pos = {node: i for i, node in enumerate(order)}
    h = h0.value
    w_dur, b_dur = t["dur_w"].value[0], t["dur_b"].value[0]

    def dur(months):
        return w_dur * math.log(months) + b_dur

    def msg(widx, vec):
        return t[widx].value @ vec

    a = (NodeKind.TITLE, vocabs.titles.index("A"))
    b = (NodeKind.TITLE, vocabs.titles.index("B"))
    x = (NodeKind.COMPANY, vocabs.companies.index("X"))
    da = (NodeKind.DESCRIPTION, table.entry(a[1]).desc_id)
    db = (NodeKind.DESCRIPTION, table.entry(b[1]).desc_id)

    expected = np.zeros_like(h)
    # X: worked_at from A (dur 2) and B (dur 8), averaged
    expected[pos[x]] = 0.5 * (
        msg("rel_worked_at_0", np.concatenate([h[pos[a]], dur(2)]))
        + msg("rel_worked_at_0", np.concatenate([h[pos[b]], dur(8)]))
    )
    # A: inverse worked_at from X (dur 2), inverse has_description from its
    # description, and inverse title transition from B
    expected[pos[a]] = (
        msg("rel_inv_worked_at_0", np.concatenate([h[pos[x]], dur(2)]))
        + msg("rel_inv_has_description_0", h[pos[da]])
        + msg("rel_inv_title_transition_0", h[pos[b]])
    )
    # B: inverse worked_at from X (dur 8), description inverse, forward title
    # transition from A
    expected[pos[b]] = (
        msg("rel_inv_worked_at_0", np.concatenate([h[pos[x]], dur(8)]))
        + msg("rel_inv_has_description_0", h[pos[db]])
        + msg("rel_title_transition_0", h[pos[a]])
    )
    # descriptions receive has_description from their titles
    expected[pos[da]] = msg("rel_has_description_0", h[pos[a]])
    expected[pos[db]] = msg("rel_has_description_0", h[pos[b]])
    expected = np.maximum(expected, 0.0)
    assert np.allclose(h1.value, expected, atol=1e-12)


# -- encoder and head ---------------------------------------------------------------


def _zero_encoder(params):
    for b in range(params.config.encoder_blocks):
        params.tensors[f"enc{b}_wo"].value[...] = 0.0
        params.tensors[f"enc{b}_bo"].value[...] = 0.0
        params.tensors[f"enc{b}_ff_w2"].value[...] = 0.0
        params.tensors[f"enc{b}_ff_b2"].value[...] = 0.0


def test_identity_encoder_single_node_pools_to_h_tilde(vocabs):
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 3)])
    table = mk_desc_table(vocabs)
    rels = relations_for_layers({"title"})
    sub, compiled = _compiled(vocabs, table, resume, relations=rels)
    # restrict to the title node only
    solo = CompiledSubgraph(
        resume_id="solo", label=0, n=1,
        kind_idx=np.array([0]), perm=np.array([0]),
        title_ids=np.array([vocabs.titles.index("A")]),
        company_ids=np.array([], dtype=np.int64),
        desc_vecs=np.zeros((0, table.dim)),
        rel_mats=[], dur_stats={},
    )
    params = _params_for(vocabs, table, rels)
    _zero_encoder(params)
    h = constant(np.arange(8, dtype=float).reshape(1, 8))
    z, prob = encode_and_classify(solo, h, params)
    h_tilde = h.value + params.tensors["type_emb"].value[0]
    assert np.allclose(z.value, h_tilde, atol=1e-12)


def test_zero_head_gives_half(vocabs):
    resume = mk_resume(vocabs, "r", 0, [("A", "X", 3), ("B", "Y", 9)])
    table = mk_desc_table(vocabs)
    sub, compiled = _compiled(vocabs, table, resume)
    params = _params_for(vocabs, table, sub.graph.relations)
    params.tensors["head_w"].value[...] = 0.0
    params.tensors["head_b"].value[...] = 0.0
    state = forward(compiled, params)
    assert state.prob.value.item() == pytest.approx(0.5)
    assert 0.0 < state.prob.value.item() < 1.0


def test_encoder_permutation_equivariance(vocabs, schema):
    resumes = gen_markov_real(
        GeneratorConfig(method="markov_real", count=10, seed=3), schema, vocabs
    )
    table = mk_desc_table(vocabs)
    graph = build_global_graph(resumes, table)
    sub = build_user_subgraph(resumes[0], vocabs, table)
    aug = augment_subgraph(sub, graph, AugmentConfig(mode="structural", max_added_nodes=24))
    params = _params_for(vocabs, table, graph.relations)

    base = compile_subgraph(aug, table.dim)
    rng = np.random.default_rng(5)
    shuffled_aug = list(aug.augmented_order)
    rng.shuffle(shuffled_aug)
    aug.augmented_order = shuffled_aug
    permuted = compile_subgraph(aug, table.dim)

    z1 = forward(base, params).pooled.value
    z2 = forward(permuted, params).pooled.value
    assert np.max(np.abs(z1 - z2)) < 1e-10
    p1 = forward(base, params).prob.value.item()
    p2 = forward(permuted, params).prob.value.item()
    assert p1 == pytest.approx(p2, abs=1e-12)


# -- bce -----------------------------------------------------------------------------


def test_bce_all_half_is_ln2():
    preds = constant(np.full((4, 1), 0.5))
    loss = bce_loss(preds, np.array([1, 0, 1, 0]))
    assert float(loss.value) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_hand_value():
    preds = constant(np.array([[0.9], [0.2]]))
    loss = bce_loss(preds, np.array([1, 0]))
    expected = -0.5 * (math.log(0.9) + math.log(0.8))
    assert float(loss.value) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1643, abs=5e-5)


def test_bce_perfect_predictions_near_zero():
    preds = constant(np.array([[1.0], [0.0]]))  # clamp keeps log finite
    loss = bce_loss(preds, np.array([1, 0]))
    assert 0.0 < float(loss.value) < 1e-6


def test_bce_length_mismatch():
    with pytest.raises(UsageError):
        bce_loss(constant(np.array([[0.5]])), np.array([1, 0]))


# -- training loop ---------------------------------------------------------------------


def _tiny_world(vocabs, schema, n_real=12, n_fake=12, seed=1):
    real = gen_markov_real(
        GeneratorConfig(method="markov_real", count=n_real, seed=seed), schema, vocabs
    )
    fakes = gen_random(real, GeneratorConfig(method="random", count=n_fake, seed=seed + 1))
    table = mk_desc_table(vocabs, dim=6)
    graph = build_global_graph(real, table)
    return real, fakes, table, graph


DESK = dict(d=16, d_d=4, heads=2, batch_size=8, lr=0.02)


def test_train_returns_best_validation_params(vocabs, schema):
    from careergraph.evaluation import compute_metrics

    real, fakes, table, graph = _tiny_world(vocabs, schema)
    cfg = ModelConfig(epochs=6, patience=6, seed=2, **DESK)
    acfg = AugmentConfig(max_added_nodes=16)
    dataset = real + fakes
    params, log = train(dataset[:16], dataset[16:], graph, cfg, acfg, vocabs, table)
    compiled_val = compile_resumes(dataset[16:], vocabs, table, graph, acfg)
    probs = M._eval_probs(compiled_val, params)
    val_labels = np.array([r.label for r in dataset[16:]], dtype=np.int64)
    # snapshot = best val micro-F1 epoch, ties broken by lower val loss
    best_micro = max(e["val_f1_micro"] for e in log)
    best_loss = min(e["val_loss"] for e in log if e["val_f1_micro"] == best_micro)
    returned_micro = compute_metrics(probs, val_labels).f1_micro
    returned_loss = float(
        bce_loss(constant(probs.reshape(-1, 1)), val_labels.astype(np.float64)).value
    )
    assert returned_micro == pytest.approx(best_micro, abs=1e-12)
    assert returned_loss == pytest.approx(best_loss, abs=1e-9)


def test_train_same_seed_identical_logs(vocabs, schema):
    real, fakes, table, graph = _tiny_world(vocabs, schema)
    cfg = ModelConfig(epochs=4, patience=4, seed=9, **DESK)
    acfg = AugmentConfig(max_added_nodes=16)
    dataset = real + fakes
    _, log1 = train(dataset[:16], dataset[16:], graph, cfg, acfg, vocabs, table)
    _, log2 = train(dataset[:16], dataset[16:], graph, cfg, acfg, vocabs, table)
    assert log1 == log2


def test_train_early_stop_mechanics(vocabs, schema, monkeypatch):
    real, fakes, table, graph = _tiny_world(vocabs, schema)
    dataset = real + fakes
    epoch_box = {"n": 0}

    def fake_eval(compiled, params):
        # strictly worsening validation predictions from epoch 1 onward
        epoch_box["n"] += 1
        drift = 0.02 * epoch_box["n"]
        return np.array(
            [0.5 - drift if c.label == 1 else 0.5 + drift for c in compiled]
        )

    monkeypatch.setattr(M, "_eval_probs", fake_eval)
    cfg = ModelConfig(epochs=100, patience=10, seed=4, **DESK)
    params, log = train(
        dataset[:16], dataset[16:], graph, cfg, AugmentConfig(max_added_nodes=8),
        vocabs, table,
    )
    assert len(log) == 11  # epoch 1 is best, ten stale epochs, stop at 11
    assert log[-1]["best_epoch"] == 1
    losses = [e["val_loss"] for e in log]
    assert all(b > a for a, b in zip(losses, losses[1:]))


def test_train_rejects_empty_split(vocabs, schema):
    real, fakes, table, graph = _tiny_world(vocabs, schema)
    cfg = ModelConfig(**DESK)
    with pytest.raises(DataError):
        train([], real, graph, cfg, AugmentConfig(), vocabs, table)


def test_overfit_separable_toy(vocabs, schema):
    from careergraph.evaluation import compute_metrics

    real, fakes, table, graph = _tiny_world(vocabs, schema, n_real=8, n_fake=8)
    dataset = real + fakes
    cfg = ModelConfig(epochs=60, patience=60, seed=3, **DESK)
    acfg = AugmentConfig(max_added_nodes=16)
    params, log = train(dataset, dataset, graph, cfg, acfg, vocabs, table)
    compiled = compile_resumes(dataset, vocabs, table, graph, acfg)
    probs = M._eval_probs(compiled, params)
    metrics = compute_metrics(probs, [r.label for r in dataset])
    assert metrics.f1_positive == 1.0


def test_label_flip_mirrors_confusion(vocabs, schema):
    from careergraph.corpus import Resume
    from careergraph.evaluation import compute_metrics

    real, fakes, table, graph = _tiny_world(vocabs, schema, n_real=8, n_fake=8)
    dataset = real + fakes
    flipped = [
        Resume(id=r.id, label=1 - r.label, source=r.source, entries=r.entries)
        for r in dataset
    ]
    cfg = ModelConfig(epochs=60, patience=60, seed=3, **DESK)
    acfg = AugmentConfig(max_added_nodes=16)

    p1, _ = train(dataset, dataset, graph, cfg, acfg, vocabs, table)
    c1 = compile_resumes(dataset, vocabs, table, graph, acfg)
    m1 = compute_metrics(M._eval_probs(c1, p1), [r.label for r in dataset])

    p2, _ = train(flipped, flipped, graph, cfg, acfg, vocabs, table)
    c2 = compile_resumes(flipped, vocabs, table, graph, acfg)
    m2 = compute_metrics(M._eval_probs(c2, p2), [r.label for r in flipped])

    assert (m1.tp, m1.tn, m1.fp, m1.fn) == (m2.tn, m2.tp, m2.fn, m2.fp)


# -- prediction -----------------------------------------------------------------------


def test_predict_is_pure(vocabs, schema):
    real, fakes, table, graph = _tiny_world(vocabs, schema)
    params = _params_for(vocabs, table, graph.relations)
    acfg = AugmentConfig(max_added_nodes=16)
    a = predict(real[0], vocabs, table, graph, params, acfg)
    b = predict(real[0], vocabs, table, graph, params, acfg)
    assert a == b
    assert 0.0 < a < 1.0


def test_prediction_ignores_unreachable_global_component(vocabs, schema):
    # two disconnected worlds in the global graph; deleting the far one
    # cannot change any prediction for a resume living in the near one
    near = [
        mk_resume(vocabs, f"n{i}", 0, [("A", "X", 3), ("B", "Y", 5), ("C", "Z", 2)])
        for i in range(3)
    ]
    far = [
        mk_resume(vocabs, f"f{i}", 0, [("D", "Q", 7), ("E", "R", 4)]) for i in range(3)
    ]
    table = mk_desc_table(vocabs, dim=16)
    g_full = build_global_graph(near + far, table)
    g_near = build_global_graph(near, table)
    # guard: the two worlds must actually be disconnected (incl. desc_similar)
    from careergraph.augment import hop_distances

    sub = build_user_subgraph(near[0], vocabs, table)
    reachable = hop_distances(g_full, sub.graph.nodes)
    far_nodes = {(NodeKind.TITLE, vocabs.titles.index(t)) for t in ("D", "E")}
    assert not (set(reachable) & far_nodes)

    params = _params_for(vocabs, table, g_full.relations)
    acfg = AugmentConfig(mode="structural", hop_threshold=2, max_added_nodes=64)
    p_full = predict(near[0], vocabs, table, g_full, params, acfg)
    p_near = predict(near[0], vocabs, table, g_near, params, acfg)
    assert p_full == p_near


# -- checkpoints ------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, vocabs, schema):
    real, fakes, table, graph = _tiny_world(vocabs, schema)
    params = _params_for(vocabs, table, graph.relations)
    path = tmp_path / "ckpt.json"
    params.save(str(path), extra={"note": "hello"})
    loaded, extra = ModelParams.load(str(path))
    assert extra == {"note": "hello"}
    assert loaded.config == params.config
    for name, tensor in params.tensors.items():
        assert np.array_equal(loaded.tensors[name].value, tensor.value)


def test_checkpoint_rejects_bad_version(tmp_path, vocabs, schema):
    real, fakes, table, graph = _tiny_world(vocabs, schema)
    params = _params_for(vocabs, table, graph.relations)
    doc = params.to_checkpoint()
    doc["format_version"] = 99
    with pytest.raises(DataError):
        ModelParams.from_checkpoint(doc)


# -- full-model gradient check ------------------------------------------------------------


def test_full_model_grad_check_small(vocabs, schema):
    real, fakes, table, graph = _tiny_world(vocabs, schema, n_real=6, n_fake=6)
    batch = [real[0], fakes[0], real[1]]
    acfg = AugmentConfig(max_added_nodes=12)
    compiled = compile_resumes(batch, vocabs, table, graph, acfg)
    params = _params_for(vocabs, table, graph.relations, d=8, d_d=4, heads=2)
    labels = np.array([r.label for r in batch], dtype=np.float64)

    def loss():
        probs = [forward(c, params).prob for c in compiled]
        return bce_loss(ad.concat(probs, axis=0), labels)

    err = grad_check(loss, params.tensors, max_coords_per_tensor=10)
    assert err < 1e-4
