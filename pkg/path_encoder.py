"""path_encoder.py

Turns one gene-encoder layer output into expression-aware path embeddings:
gather along the scatter index, add positional and pair-edge encodings,
score nodes within each path, pool and cross-attend to path sentences.
"""

from __future__ import annotations

import math
from typing import Dict, Mapping, Tuple

import numerics as nx
from errors import DataValidationError
from graph_model import ScatterIndex
from numerics import Tensor


def path_specific_embedding(h: Tensor, index: ScatterIndex, tp: Mapping[str, Tensor], layer: int) -> Tensor:
    p = f"path.{layer}"
    return nx.add(nx.matmul(nx.gather_rows(h, index.flat_nodes), tp[p + ".wu"]), tp[p + ".bu"])


def apply_path_encodings(u: Tensor, index: ScatterIndex, tp: Mapping[str, Tensor], layer: int) -> Tensor:
    p = f"path.{layer}"
    table = tp[p + ".pos"]
    if index.k and int(index.positions.max()) >= table.shape[0]:
        raise DataValidationError(
            f"path position {int(index.positions.max())} exceeds positional table size {table.shape[0]}"
        )
    pos = nx.gather_rows(table, index.positions)
    edge = nx.gather_rows(tp[p + ".edge"], index.pair_edge_types)
    return nx.add(nx.add(u, pos), edge)


def node_scores(u_bar: Tensor, index: ScatterIndex, tp: Mapping[str, Tensor], layer: int) -> Tensor:
    """r score sets per node, each normalized within its path."""
    p = f"path.{layer}"
    hidden = nx.tanh(nx.add(nx.matmul(u_bar, tp[p + ".ws1"]), tp[p + ".bs1"]))
    s = nx.add(nx.matmul(hidden, tp[p + ".ws2"]), tp[p + ".bs2"])
    return nx.scatter_softmax(s, index.segment_ids, index.num_paths)


def aggregate_path_embedding(scores: Tensor, u_bar: Tensor, index: ScatterIndex) -> Tensor:
    """Concatenate, over score sets j, the per-path sums of score_j * U-bar rows."""
    r = scores.shape[1]
    pooled = [
        nx.scatter_sum(nx.mul(nx.slice_cols(scores, j, j + 1), u_bar), index.segment_ids, index.num_paths)
        for j in range(r)
    ]
    return nx.concat_cols(pooled)


def cross_attend(
    p_raw: Tensor,
    path_sentence: Tensor,
    tp: Mapping[str, Tensor],
    layer: int,
    *,
    heads: int,
    d_k: int,
) -> Tensor:
    """Queries from path embeddings, keys/values from path sentence embeddings, residual output."""
    if path_sentence.shape[0] != p_raw.shape[0]:
        raise DataValidationError(
            f"{p_raw.shape[0]} paths but {path_sentence.shape[0]} path sentence embeddings"
        )
    p = f"path.{layer}"
    q = nx.matmul(p_raw, tp[p + ".xq"])
    k = nx.matmul(path_sentence, tp[p + ".xk"])
    v = nx.matmul(path_sentence, tp[p + ".xv"])
    outs = []
    for i in range(heads):
        cols = (i * d_k, (i + 1) * d_k)
        qi, ki, vi = (nx.slice_cols(t, *cols) for t in (q, k, v))
        attn = nx.softmax_rows(nx.scale(nx.matmul(qi, nx.transpose(ki)), 1.0 / math.sqrt(d_k)))
        outs.append(nx.matmul(attn, vi))
    return nx.add(p_raw, nx.matmul(nx.concat_cols(outs), tp[p + ".xo"]))


def path_layer_forward(
    h: Tensor,
    index: ScatterIndex,
    path_sentence: Tensor,
    tp: Mapping[str, Tensor],
    layer: int,
    *,
    heads: int,
    d_k: int,
) -> Tensor:
    u = path_specific_embedding(h, index, tp, layer)
    u_bar = apply_path_encodings(u, index, tp, layer)
    scores = node_scores(u_bar, index, tp, layer)
    p_raw = aggregate_path_embedding(scores, u_bar, index)
    return cross_attend(p_raw, path_sentence, tp, layer, heads=heads, d_k=d_k)


def path_param_shapes(n_edge_types: int, max_path_len: int, *, h_emb: int, heads: int, d_k: int,
                      d_llm: int, r: int, u: int, n_layers: int) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    for layer in range(n_layers):
        p = f"path.{layer}"
        shapes[p + ".wu"] = (h_emb, u)
        shapes[p + ".bu"] = (1, u)
        shapes[p + ".pos"] = (max_path_len, u)
        # graph types, then TERMINAL
        shapes[p + ".edge"] = (n_edge_types + 1, u)
        shapes[p + ".ws1"] = (u, r)
        shapes[p + ".bs1"] = (1, r)
        shapes[p + ".ws2"] = (r, r)
        shapes[p + ".bs2"] = (1, r)
        shapes[p + ".xq"] = (h_emb, heads * d_k)
        shapes[p + ".xk"] = (d_llm, heads * d_k)
        shapes[p + ".xv"] = (d_llm, heads * d_k)
        shapes[p + ".xo"] = (heads * d_k, h_emb)
    return shapes