"""gene_encoder.py

Expander fusion of expression with gene sentence embeddings, degree
(centrality) encoding and the biased multi-head self-attention layers.

Parameter tensors are looked up by name in `tp` (see model.param_shapes).
"""

from __future__ import annotations

import math
from typing import Dict, List, Mapping, Tuple, Union

import numpy as np

import numerics as nx
from errors import NumericError
from numerics import Tensor


def mlp(x: Tensor, tp: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Linear -> ReLU -> Linear."""
    hidden = nx.relu(nx.add(nx.matmul(x, tp[prefix + ".w1"]), tp[prefix + ".b1"]))
    return nx.add(nx.matmul(hidden, tp[prefix + ".w2"]), tp[prefix + ".b2"])


def expand_input(ge: np.ndarray, gene_text: Tensor, tp: Mapping[str, Tensor]) -> Tensor:
    """X_v = MLP(Concat(se_v, MLP(ge_v))) for every gene at once."""
    ge = np.asarray(ge, dtype=np.float64)
    if not np.all(np.isfinite(ge)):
        raise NumericError("non-finite expression value")
    expanded = mlp(nx.constant(ge.reshape(-1, 1)), tp, "expander.expr")
    return mlp(nx.concat_cols([gene_text, expanded]), tp, "expander.fuse")


def clamp_degrees(degrees: np.ndarray, d_max: int) -> np.ndarray:
    return np.minimum(np.asarray(degrees, dtype=np.int64), d_max)


def centrality_encode(x: Tensor, degrees: Tuple[np.ndarray, np.ndarray], tp: Mapping[str, Tensor], d_max: int) -> Tensor:
    in_deg, out_deg = degrees
    z_in = nx.gather_rows(tp["centrality.z_in"], clamp_degrees(in_deg, d_max))
    z_out = nx.gather_rows(tp["centrality.z_out"], clamp_degrees(out_deg, d_max))
    return nx.add(nx.add(x, z_in), z_out)


def build_attention_bias(type_matrix: np.ndarray, tp: Mapping[str, Tensor], heads: int) -> List[Tensor]:
    """Per head: beta_i * (I I^T)/sqrt(h_emb) + edge scalar of the pair's type."""
    node_id = tp["spatial.node_id"]
    h_emb = node_id.shape[1]
    spatial = nx.scale(nx.matmul(node_id, nx.transpose(node_id)), 1.0 / math.sqrt(h_emb))
    bias = []
    for i in range(heads):
        beta = nx.slice_cols(tp["spatial.scale"], i, i + 1)
        edge = nx.gather(tp["edge.scalar"], np.full(type_matrix.shape, i), type_matrix)
        bias.append(nx.add(nx.mul(beta, spatial), edge))
    return bias


def gene_layer_forward(
    h: Tensor,
    bias: List[Tensor],
    tp: Mapping[str, Tensor],
    layer: int,
    *,
    heads: int,
    d_k: int,
    return_attention: bool = False,
) -> Union[Tensor, Tuple[Tensor, List[np.ndarray]]]:
    p = f"gene.{layer}"
    q = nx.matmul(h, tp[p + ".wq"])
    k = nx.matmul(h, tp[p + ".wk"])
    v = nx.matmul(h, tp[p + ".wv"])

    outs, weights = [], []
    for i in range(heads):
        cols = (i * d_k, (i + 1) * d_k)
        qi, ki, vi = (nx.slice_cols(t, *cols) for t in (q, k, v))
        logits = nx.add(nx.scale(nx.matmul(qi, nx.transpose(ki)), 1.0 / math.sqrt(d_k)), bias[i])
        attn = nx.softmax_rows(logits)
        weights.append(attn.data)
        outs.append(nx.matmul(attn, vi))

    o = nx.matmul(nx.concat_cols(outs), tp[p + ".wo"])
    a = nx.add(h, o)
    ffn = mlp(a, tp, p + ".ffn")
    out = nx.add(a, ffn)
    if return_attention:
        return out, weights
    return out


def gene_param_shapes(n: int, n_edge_types: int, *, h_emb: int, heads: int, d_k: int, d_llm: int,
                      d_expand: int, d_max: int, n_layers: int) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {
        "expander.expr.w1": (1, d_expand),
        "expander.expr.b1": (1, d_expand),
        "expander.expr.w2": (d_expand, d_expand),
        "expander.expr.b2": (1, d_expand),
        "expander.fuse.w1": (d_llm + d_expand, h_emb),
        "expander.fuse.b1": (1, h_emb),
        "expander.fuse.w2": (h_emb, h_emb),
        "expander.fuse.b2": (1, h_emb),
        "centrality.z_in": (d_max + 1, h_emb),
        "centrality.z_out": (d_max + 1, h_emb),
        "spatial.node_id": (n, h_emb),
        "spatial.scale": (1, heads),
        # graph types, then NO_EDGE, then SELF
        "edge.scalar": (heads, n_edge_types + 2),
    }
    for layer in range(n_layers):
        p = f"gene.{layer}"
        shapes[p + ".wq"] = (h_emb, heads * d_k)
        shapes[p + ".wk"] = (h_emb, heads * d_k)
        shapes[p + ".wv"] = (h_emb, heads * d_k)
        shapes[p + ".wo"] = (heads * d_k, h_emb)
        shapes[p + ".ffn.w1"] = (h_emb, h_emb)
        shapes[p + ".ffn.b1"] = (1, h_emb)
        shapes[p + ".ffn.w2"] = (h_emb, h_emb)
        shapes[p + ".ffn.b2"] = (1, h_emb)
    return shapes
