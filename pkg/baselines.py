"""baselines.py

Reference classifiers evaluated on the same split as the graph model: a
prior-matched random guess, an MLP and a random forest on the flat expression
vector, and a two-layer GCN over the gene graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.neural_network import MLPClassifier

import numerics as nx
from errors import DataValidationError, NumericError
from graph_model import ExpressionDataset, GeneGraph
from metrics import Metrics, compute_metrics
from numerics import GradTape, Tensor
from training import AdamState, split_dataset

logger = logging.getLogger(__name__)

BASELINE_NAMES = ["random", "mlp", "random_forest", "gcn"]


# ---------- GCN ----------

@dataclass(frozen=True)
class GCNConfig:
    hidden: int = 16
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-2


def normalized_adjacency(graph: GeneGraph) -> np.ndarray:
    """D^-1/2 (A + A^T + I) D^-1/2 on the undirected gene graph."""
    a = graph.adjacency()
    a = np.minimum(a + a.T, 1.0) + np.eye(graph.n)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d[:, None] * d[None, :]


def init_gcn_params(hidden: int, seed: int) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 3])
    glorot = lambda fan_in, fan_out: rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))
    return {
        "gcn.w1": glorot(1, hidden),
        "gcn.b1": np.zeros((1, hidden)),
        "gcn.w2": glorot(hidden, hidden),
        "gcn.b2": np.zeros((1, hidden)),
        "gcn.w_out": glorot(hidden, 2),
        "gcn.b_out": np.zeros((1, 2)),
    }


def gcn_logits(tp: Mapping[str, Tensor], a_hat: Tensor, expression: np.ndarray) -> Tensor:
    """Two propagation layers on per-gene expression, mean-pooled to one (1, 2) logit row."""
    n = a_hat.shape[0]
    x = nx.constant(np.asarray(expression, dtype=np.float64).reshape(n, 1))
    h = nx.relu(nx.add(nx.matmul(nx.matmul(a_hat, x), tp["gcn.w1"]), tp["gcn.b1"]))
    h = nx.relu(nx.add(nx.matmul(nx.matmul(a_hat, h), tp["gcn.w2"]), tp["gcn.b2"]))
    pooled = nx.matmul(nx.constant(np.full((1, n), 1.0 / n)), h)
    return nx.add(nx.matmul(pooled, tp["gcn.w_out"]), tp["gcn.b_out"])


def fit_gcn(graph: GeneGraph, train_set: ExpressionDataset, seed: int, config: GCNConfig = GCNConfig()) -> Dict[str, np.ndarray]:
    if train_set.n != graph.n:
        raise DataValidationError(f"expression has {train_set.n} genes, graph has {graph.n}")
    a_hat = nx.constant(normalized_adjacency(graph))
    params = init_gcn_params(config.hidden, seed)
    opt = AdamState(config.learning_rate, 0.9, 0.999, 1e-8)
    rng = np.random.default_rng([seed, 4])
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            tape = GradTape()
            tp = tape.watch(params)
            losses = [nx.cross_entropy(gcn_logits(tp, a_hat, train_set.expression[i]), int(train_set.labels[i]))
                      for i in idx]
            loss = nx.scale(nx.add_n(losses), 1.0 / len(losses))
            if not np.isfinite(loss.data):
                raise NumericError(f"gcn baseline: non-finite loss at epoch {epoch}")
            params = opt.step(params, nx.backward(tape, loss))
    return params


def gcn_predict_positive(params: Mapping[str, np.ndarray], graph: GeneGraph, dataset: ExpressionDataset) -> np.ndarray:
    a_hat = nx.constant(normalized_adjacency(graph))
    tp = {k: nx.constant(v) for k, v in params.items()}
    return np.array([nx.softmax_rows(gcn_logits(tp, a_hat, row)).data[0, 1] for row in dataset.expression])


# ---------- all baselines ----------

def run_baselines(
    dataset: ExpressionDataset,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    graph: Optional[GeneGraph] = None,
    gcn: GCNConfig = GCNConfig(),
) -> Dict[str, Metrics]:
    """Metrics per baseline on the test split; the GCN runs only when a graph is given."""
    train_set, _, test_set = split_dataset(dataset, ratios, seed)
    if len(test_set) == 0:
        raise DataValidationError("test split is empty")
    x, y = train_set.expression, train_set.labels
    fitted = ["mlp", "random_forest"] + (["gcn"] if graph is not None else [])

    results: Dict[str, Metrics] = {}
    prior = float(y.mean()) if len(y) else 0.5
    draws = np.random.default_rng([seed, 2]).random(len(test_set))
    results["random"] = compute_metrics(test_set.labels, (draws < prior).astype(np.float64))

    if np.unique(y).size < 2:
        logger.warning("training split holds one class; fitted baselines predict it everywhere")
        constant = np.full(len(test_set), float(y[0]))
        for name in fitted:
            results[name] = compute_metrics(test_set.labels, constant)
        return results

    mlp = MLPClassifier(hidden_layer_sizes=(64,), max_iter=500, random_state=seed)
    mlp.fit(x, y)
    results["mlp"] = compute_metrics(test_set.labels, mlp.predict_proba(test_set.expression)[:, 1])

    forest = RandomForestClassifier(n_estimators=200, random_state=seed)
    forest.fit(x, y)
    results["random_forest"] = compute_metrics(test_set.labels, forest.predict_proba(test_set.expression)[:, 1])

    if graph is not None:
        params = fit_gcn(graph, train_set, seed, gcn)
        results["gcn"] = compute_metrics(test_set.labels, gcn_predict_positive(params, graph, test_set))
    return results
