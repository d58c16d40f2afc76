"""graph_encoder.py

Dataset-global path importance, per-layer graph pooling, jumping-knowledge
max and the binary softmax head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

import numerics as nx
from errors import DataValidationError
from numerics import Tensor


@dataclass(frozen=True, eq=False)
class PathImportance:
    values: np.ndarray

    def ranking(self) -> np.ndarray:
        """Path indices by descending importance, ties by ascending index."""
        return np.lexsort((np.arange(self.values.size), -self.values))


@dataclass(frozen=True, eq=False)
class Prediction:
    probs: np.ndarray
    graph_embedding: np.ndarray

    @property
    def positive(self) -> float:
        return float(self.probs[1])


def path_importance(m: Tensor) -> Tensor:
    """I = sigmoid(M), shape (1, p)."""
    return nx.sigmoid(m)


def importance_values(m: np.ndarray) -> PathImportance:
    return PathImportance(nx.sigmoid(nx.constant(np.asarray(m, dtype=np.float64).reshape(1, -1))).data[0])


def layer_graph_embedding(importance: Tensor, p_layer: Tensor) -> Tensor:
    """g = I P, shape (1, h_emb)."""
    if importance.shape[1] != p_layer.shape[0]:
        raise DataValidationError(f"{importance.shape[1]} importances for {p_layer.shape[0]} paths")
    return nx.matmul(importance, p_layer)


def jumping_knowledge(layers: Sequence[Tensor]) -> Tensor:
    if not layers:
        raise DataValidationError("jumping_knowledge needs at least one layer")
    if len(layers) == 1:
        return layers[0]
    return nx.max_stack(layers)


def classify_logits(g: Tensor, w_p: Tensor) -> Tensor:
    return nx.matmul(g, w_p)


def classify(g: Tensor, w_p: Tensor) -> Prediction:
    probs = nx.softmax_rows(classify_logits(g, w_p))
    return Prediction(probs=probs.data[0].copy(), graph_embedding=g.data[0].copy())
