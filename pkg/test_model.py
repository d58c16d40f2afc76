import math

import numpy as np
import pytest

import numerics as nx
from errors import DataValidationError, NumericError
from gene_encoder import build_attention_bias, centrality_encode, expand_input, gene_layer_forward
from graph_encoder import importance_values, jumping_knowledge, layer_graph_embedding, path_importance
from graph_model import PathList, build_scatter_index
from model import ModelConfig, batch_loss, build_context, forward_cell, init_params, param_shapes, predict, shared_tensors
from path_encoder import (
    aggregate_path_embedding,
    apply_path_encodings,
    cross_attend,
    node_scores,
    path_layer_forward,
    path_specific_embedding,
)


def _constants(params):
    return {k: nx.constant(v) for k, v in params.items()}


def _perturbed(ctx, seed=0, scale=0.1):
    rng = np.random.default_rng(seed + 100)
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in init_params(ctx, seed).items()}


def test_config_rejects_inconsistent_heads():
    with pytest.raises(DataValidationError):
        ModelConfig(h_emb=64, heads=4, d_k=8).validate()
    with pytest.raises(DataValidationError):
        ModelConfig(r=3).validate()


def test_param_groups_are_initialized(tiny_context):
    params = init_params(tiny_context, 0)
    shapes = param_shapes(tiny_context)
    assert set(params) == set(shapes)
    assert all(params[k].shape == s for k, s in shapes.items())
    np.testing.assert_array_equal(params["graph.m"], 0.0)
    np.testing.assert_array_equal(params["spatial.scale"], 1.0)


def test_init_is_deterministic(tiny_context):
    a, b = init_params(tiny_context, 5), init_params(tiny_context, 5)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_gradients_match_finite_differences(tiny_context, tiny_data):
    _, _, ds = tiny_data
    params = _perturbed(tiny_context)
    expr, labels = ds.expression[:2], ds.labels[:2]
    _, grads = batch_loss(params, tiny_context, expr, labels)
    f = lambda p: batch_loss(p, tiny_context, expr, labels, with_grad=False)[0]
    report = nx.finite_difference_report(f, params, analytic=grads, max_coords=6)
    assert set(report) == set(params)
    worst = max(report, key=report.get)
    assert report[worst] < 1e-4, worst


def test_batch_loss_is_bitwise_repeatable(tiny_context, tiny_data):
    _, _, ds = tiny_data
    params = init_params(tiny_context, 1)
    l1, g1 = batch_loss(params, tiny_context, ds.expression, ds.labels)
    l2, g2 = batch_loss(params, tiny_context, ds.expression, ds.labels)
    assert l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_prediction_does_not_depend_on_batch(tiny_context, tiny_data):
    _, _, ds = tiny_data
    params = _perturbed(tiny_context)
    together = predict(params, tiny_context, ds.expression[:3])
    alone = predict(params, tiny_context, ds.expression[1])
    np.testing.assert_array_equal(together[1].probs, alone[0].probs)
    assert together[1].probs.sum() == pytest.approx(1.0)


def test_non_finite_expression_rejected(tiny_context):
    params = init_params(tiny_context, 0)
    bad = np.zeros(tiny_context.graph.n)
    bad[0] = np.nan
    with pytest.raises(NumericError):
        predict(params, tiny_context, bad)


def test_zero_centrality_tables_leave_features_unchanged(tiny_context):
    params = init_params(tiny_context, 0)
    params["centrality.z_in"] = np.zeros_like(params["centrality.z_in"])
    params["centrality.z_out"] = np.zeros_like(params["centrality.z_out"])
    tp = _constants(params)
    x = expand_input(np.ones(tiny_context.graph.n), nx.constant(tiny_context.gene_text), tp)
    h = centrality_encode(x, tiny_context.degrees, tp, tiny_context.config.d_max)
    np.testing.assert_array_equal(h.data, x.data)


def test_degrees_above_cap_share_last_row(tiny_context):
    params = init_params(tiny_context, 0)
    tp = _constants(params)
    x = nx.constant(np.zeros((2, tiny_context.config.h_emb)))
    d_max = tiny_context.config.d_max
    h = centrality_encode(x, (np.array([d_max, d_max + 5]), np.array([0, 0])), tp, d_max)
    np.testing.assert_array_equal(h.data[0], h.data[1])


def test_zero_bias_tables_give_vanilla_attention(tiny_context):
    c = tiny_context.config
    params = init_params(tiny_context, 0)
    params["spatial.node_id"] = np.zeros_like(params["spatial.node_id"])
    params["edge.scalar"] = np.zeros_like(params["edge.scalar"])
    tp = _constants(params)
    bias = build_attention_bias(tiny_context.type_matrix, tp, c.heads)
    assert all(np.all(b.data == 0.0) for b in bias)

    h = nx.constant(np.random.default_rng(0).standard_normal((tiny_context.graph.n, c.h_emb)))
    _, weights = gene_layer_forward(h, bias, tp, 0, heads=c.heads, d_k=c.d_k, return_attention=True)
    q = h.data @ params["gene.0.wq"]
    k = h.data @ params["gene.0.wk"]
    for i, w in enumerate(weights):
        s = q[:, i * c.d_k:(i + 1) * c.d_k] @ k[:, i * c.d_k:(i + 1) * c.d_k].T / math.sqrt(c.d_k)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        np.testing.assert_allclose(w, e / e.sum(axis=1, keepdims=True), rtol=1e-12, atol=1e-15)


def test_attention_rows_sum_to_one(tiny_context):
    c = tiny_context.config
    tp = _constants(_perturbed(tiny_context))
    bias = build_attention_bias(tiny_context.type_matrix, tp, c.heads)
    h = nx.constant(np.ones((tiny_context.graph.n, c.h_emb)))
    _, weights = gene_layer_forward(h, bias, tp, 1, heads=c.heads, d_k=c.d_k, return_attention=True)
    for w in weights:
        np.testing.assert_allclose(w.sum(axis=1), 1.0)


def test_zero_path_logits_give_half_importance(tiny_context):
    params = init_params(tiny_context, 0)
    np.testing.assert_array_equal(path_importance(nx.constant(params["graph.m"])).data, 0.5)
    np.testing.assert_array_equal(importance_values(params["graph.m"]).values, 0.5)


def test_single_layer_embedding_is_layer_embedding():
    g = nx.constant(np.array([[1.0, -2.0, 3.0]]))
    assert jumping_knowledge([g]) is g


def test_jumping_knowledge_takes_elementwise_max():
    a = nx.constant(np.array([[1.0, 5.0]]))
    b = nx.constant(np.array([[3.0, 2.0]]))
    np.testing.assert_array_equal(jumping_knowledge([a, b]).data, [[3.0, 5.0]])


def test_graph_embedding_weights_paths_by_importance():
    importance = nx.constant(np.array([[0.5, 0.25]]))
    p = nx.constant(np.array([[2.0, 0.0], [0.0, 4.0]]))
    np.testing.assert_array_equal(layer_graph_embedding(importance, p).data, [[1.0, 1.0]])


def test_path_scores_normalize_within_each_path(tiny_context):
    c = tiny_context.config
    tp = _constants(_perturbed(tiny_context))
    h = nx.constant(np.random.default_rng(1).standard_normal((tiny_context.graph.n, c.h_emb)))
    index = tiny_context.index
    u_bar = apply_path_encodings(path_specific_embedding(h, index, tp, 0), index, tp, 0)
    scores = node_scores(u_bar, index, tp, 0).data
    assert scores.shape == (index.k, c.r)
    sums = np.zeros((index.num_paths, c.r))
    np.add.at(sums, index.segment_ids, scores)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_positional_table_overflow(tiny_context, tiny_data):
    graph, paths, _ = tiny_data
    longest = max(paths.lengths)
    with pytest.raises(DataValidationError):
        build_context(tiny_context.config, graph, paths, None, max_path_len=longest - 1)


def test_cross_attention_count_mismatch(tiny_context):
    c = tiny_context.config
    tp = _constants(init_params(tiny_context, 0))
    p_raw = nx.constant(np.zeros((tiny_context.paths.p, c.h_emb)))
    sentences = nx.constant(np.zeros((tiny_context.paths.p + 1, c.d_llm)))
    with pytest.raises(DataValidationError):
        cross_attend(p_raw, sentences, tp, 0, heads=c.heads, d_k=c.d_k)


def test_invalid_path_rejected_by_context(tiny_config, five_gene_graph):
    bad = PathList(("x",), ((0, 4),))
    with pytest.raises(DataValidationError):
        build_context(tiny_config, five_gene_graph, bad, None)


def test_text_ablation_zeroes_sentence_embeddings(tiny_config, tiny_data):
    graph, paths, _ = tiny_data
    cfg = ModelConfig(**{**tiny_config.__dict__, "use_gene_text": False, "use_path_text": False})
    ctx = build_context(cfg, graph, paths, None)
    assert not ctx.gene_text.any() and not ctx.path_text.any()


def test_forward_returns_logits_and_embedding(tiny_context, tiny_data):
    _, _, ds = tiny_data
    tp = _constants(init_params(tiny_context, 0))
    logits, g = forward_cell(tp, tiny_context, shared_tensors(tp, tiny_context), ds.expression[0])
    assert logits.shape == (1, 2)
    assert g.shape == (1, tiny_context.config.h_emb)


def _layer_tensors(ctx, seed=0):
    return _constants(_perturbed(ctx, seed))


def test_gene_layer_is_permutation_equivariant_without_bias(tiny_context):
    c = tiny_context.config
    tp = _layer_tensors(tiny_context)
    rng = np.random.default_rng(7)
    n = 5
    h = rng.standard_normal((n, c.h_emb))
    perm = rng.permutation(n)
    zero_bias = [nx.constant(np.zeros((n, n))) for _ in range(c.heads)]
    out = gene_layer_forward(nx.constant(h), zero_bias, tp, 0, heads=c.heads, d_k=c.d_k).data
    out_perm = gene_layer_forward(nx.constant(h[perm]), zero_bias, tp, 0, heads=c.heads, d_k=c.d_k).data
    np.testing.assert_allclose(out_perm, out[perm], rtol=1e-12, atol=1e-12)


def test_node_ids_break_symmetry_between_swapped_genes(tiny_context):
    c = tiny_context.config
    params = _perturbed(tiny_context)
    t = tiny_context.graph.n_edge_types
    # 0 -> 2 is an edge, 1 is isolated
    types = np.full((3, 3), t)
    np.fill_diagonal(types, t + 1)
    types[0, 2] = 0
    rng = np.random.default_rng(3)
    ids = rng.standard_normal((3, c.h_emb))
    h = nx.constant(rng.standard_normal((3, c.h_emb)))

    def run(node_id):
        tp = _constants({**params, "spatial.node_id": node_id})
        bias = build_attention_bias(types, tp, c.heads)
        return gene_layer_forward(h, bias, tp, 0, heads=c.heads, d_k=c.d_k).data

    swapped = ids[[1, 0, 2]]
    assert not np.allclose(run(ids), run(swapped))


def test_path_layer_rows_follow_path_order(tiny_context):
    c = tiny_context.config
    graph, paths = tiny_context.graph, tiny_context.paths
    tp = _layer_tensors(tiny_context, 2)
    h = nx.constant(np.random.default_rng(4).standard_normal((graph.n, c.h_emb)))
    perm = np.arange(paths.p)[::-1]
    reordered = PathList(tuple(paths.path_ids[m] for m in perm), tuple(paths.paths[m] for m in perm))

    def run(path_list, sentences):
        index = build_scatter_index(path_list, graph)
        return path_layer_forward(h, index, nx.constant(sentences), tp, 0, heads=c.heads, d_k=c.d_k).data

    base = run(paths, tiny_context.path_text)
    moved = run(reordered, tiny_context.path_text[perm])
    np.testing.assert_allclose(moved, base[perm], rtol=1e-12, atol=1e-12)


def test_aggregate_matches_loop_oracle(tiny_context):
    c = tiny_context.config
    index = tiny_context.index
    rng = np.random.default_rng(5)
    scores = rng.random((index.k, c.r))
    u_bar = rng.standard_normal((index.k, c.u))
    out = aggregate_path_embedding(nx.constant(scores), nx.constant(u_bar), index).data

    expected = np.zeros((index.num_paths, c.r * c.u))
    for m in range(index.num_paths):
        for j in range(c.r):
            for row in range(index.k):
                if index.segment_ids[row] == m:
                    expected[m, j * c.u:(j + 1) * c.u] += scores[row, j] * u_bar[row]
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_loss_gradient_reaches_path_logits(tiny_context, tiny_data):
    _, _, ds = tiny_data
    params = _perturbed(tiny_context)
    _, grads = batch_loss(params, tiny_context, ds.expression[:4], ds.labels[:4])
    assert grads["graph.m"].shape == params["graph.m"].shape
    assert np.any(grads["graph.m"] != 0.0)
