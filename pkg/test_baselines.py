import numpy as np
import pytest

import numerics as nx
from baselines import (
    BASELINE_NAMES,
    GCNConfig,
    gcn_logits,
    gcn_predict_positive,
    init_gcn_params,
    normalized_adjacency,
    run_baselines,
)
from graph_model import Edge, ExpressionDataset, Gene, GeneGraph, synthesize_dataset
from numerics import GradTape

FAST_GCN = GCNConfig(hidden=4, epochs=2, batch_size=16)


def test_normalized_adjacency_is_symmetric(five_gene_graph):
    a = normalized_adjacency(five_gene_graph)
    np.testing.assert_allclose(a, a.T)
    # gene 3 touches genes 1, 2, 4 plus itself
    assert a[2, 2] == pytest.approx(1.0 / 4.0)
    assert a[0, 2] == pytest.approx(1.0 / np.sqrt(2.0 * 4.0))
    assert a[0, 1] == 0.0


def test_isolated_gene_keeps_only_itself():
    graph = GeneGraph((Gene("A", "A"), Gene("B", "B"), Gene("C", "C")), (Edge(0, 1, 0),), 1)
    a = normalized_adjacency(graph)
    np.testing.assert_array_equal(a[2], [0.0, 0.0, 1.0])


def test_gcn_gradients_match_finite_differences(five_gene_graph):
    rng = np.random.default_rng(0)
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in init_gcn_params(3, 0).items()}
    a_hat = nx.constant(normalized_adjacency(five_gene_graph))
    x = rng.standard_normal(5)

    tape = GradTape()
    loss = nx.cross_entropy(gcn_logits(tape.watch(params), a_hat, x), 1)
    grads = nx.backward(tape, loss)
    f = lambda p: float(nx.cross_entropy(gcn_logits({k: nx.constant(v) for k, v in p.items()}, a_hat, x), 1).data)
    report = nx.finite_difference_report(f, params, analytic=grads)
    worst = max(report, key=report.get)
    assert report[worst] < 1e-4, worst


def test_gcn_probabilities_are_valid(five_gene_graph):
    ds = ExpressionDataset(("c1", "c2"), np.arange(10.0).reshape(2, 5), np.array([0, 1]), (None, None), (None, None))
    probs = gcn_predict_positive(init_gcn_params(4, 1), five_gene_graph, ds)
    assert probs.shape == (2,)
    assert np.all((probs > 0.0) & (probs < 1.0))


def test_run_baselines_with_graph_reports_every_model():
    graph, _, ds = synthesize_dataset(8, 3, 40, 0, 3.0, seed=2)
    results = run_baselines(ds, (0.7, 0.1, 0.2), 0, graph=graph, gcn=FAST_GCN)
    assert list(results) == BASELINE_NAMES
    assert all(0.0 <= m.accuracy <= 1.0 for m in results.values())


def test_run_baselines_without_graph_skips_gcn():
    _, _, ds = synthesize_dataset(8, 3, 40, 0, 3.0, seed=2)
    assert "gcn" not in run_baselines(ds, (0.7, 0.1, 0.2), 0)


def test_gcn_is_deterministic_per_seed():
    graph, _, ds = synthesize_dataset(8, 3, 40, 0, 3.0, seed=2)
    a = run_baselines(ds, (0.7, 0.1, 0.2), 1, graph=graph, gcn=FAST_GCN)["gcn"]
    b = run_baselines(ds, (0.7, 0.1, 0.2), 1, graph=graph, gcn=FAST_GCN)["gcn"]
    assert a == b
