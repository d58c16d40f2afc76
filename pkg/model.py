"""model.py

Wires the gene, path and graph encoders into one per-cell forward pass and
owns the parameter table (a flat name -> float64 array mapping).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import numerics as nx
from errors import DataValidationError
from gene_encoder import build_attention_bias, centrality_encode, expand_input, gene_layer_forward, gene_param_shapes
from graph_encoder import Prediction, classify, classify_logits, jumping_knowledge, layer_graph_embedding, path_importance
from graph_model import GeneGraph, PathList, ScatterIndex, build_scatter_index, compute_degrees, validate_paths
from numerics import GradTape, Tensor
from path_encoder import path_layer_forward, path_param_shapes
from text_embedding import EmbeddingStore, resolve_gene_matrix, resolve_path_matrix

logger = logging.getLogger(__name__)

ModelParams = Dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    h_emb: int = 64
    heads: int = 4
    d_k: int = 16
    r: int = 4
    u: int = 16
    d_llm: int = 768
    d_expand: int = 32
    d_max: int = 64
    use_gene_text: bool = True
    use_path_text: bool = True

    def validate(self) -> None:
        if min(self.n_layers, self.h_emb, self.heads, self.d_k, self.r, self.u, self.d_llm, self.d_expand) < 1:
            raise DataValidationError("model dimensions must be positive")
        if self.heads * self.d_k != self.h_emb:
            raise DataValidationError(f"heads*d_k = {self.heads * self.d_k} must equal h_emb = {self.h_emb}")
        if self.r * self.u != self.h_emb:
            raise DataValidationError(f"r*u = {self.r * self.u} must equal h_emb = {self.h_emb}")
        if self.d_max < 0:
            raise DataValidationError("d_max must be nonnegative")


@dataclass(frozen=True, eq=False)
class ModelContext:
    """Everything a forward pass shares across cells of one graph."""

    config: ModelConfig
    graph: GeneGraph
    paths: PathList
    index: ScatterIndex
    degrees: Tuple[np.ndarray, np.ndarray]
    type_matrix: np.ndarray
    gene_text: np.ndarray
    path_text: np.ndarray
    max_path_len: int


def build_context(
    config: ModelConfig,
    graph: GeneGraph,
    paths: PathList,
    store: Optional[EmbeddingStore],
    *,
    max_path_len: Optional[int] = None,
    seed: int = 0,
) -> ModelContext:
    config.validate()
    violations = validate_paths(paths, graph)
    if violations:
        first = violations[0]
        raise DataValidationError(
            f"{len(violations)} path violations; first: path {paths.path_ids[first.path_index]} "
            f"position {first.position}: {first.message}"
        )
    if paths.p == 0:
        raise DataValidationError("path list is empty")

    if store is not None and store.d_llm != config.d_llm:
        raise DataValidationError(f"embedding store width {store.d_llm} != d_llm {config.d_llm}")
    fallback = store if store is not None else EmbeddingStore(d_llm=config.d_llm)
    gene_text = resolve_gene_matrix(fallback, graph, seed) if config.use_gene_text else np.zeros((graph.n, config.d_llm))
    path_text = resolve_path_matrix(fallback, paths, graph, seed) if config.use_path_text else np.zeros((paths.p, config.d_llm))

    needed = paths.max_length
    if max_path_len is None:
        max_path_len = needed
    elif needed > max_path_len:
        raise DataValidationError(f"path of length {needed} exceeds the model's maximum {max_path_len}")

    return ModelContext(
        config=config,
        graph=graph,
        paths=paths,
        index=build_scatter_index(paths, graph),
        degrees=compute_degrees(graph),
        type_matrix=graph.edge_type_matrix(),
        gene_text=gene_text,
        path_text=path_text,
        max_path_len=max_path_len,
    )


def param_shapes(ctx: ModelContext) -> Dict[str, Tuple[int, ...]]:
    c = ctx.config
    shapes = gene_param_shapes(
        ctx.graph.n, ctx.graph.n_edge_types, h_emb=c.h_emb, heads=c.heads, d_k=c.d_k, d_llm=c.d_llm,
        d_expand=c.d_expand, d_max=c.d_max, n_layers=c.n_layers,
    )
    shapes.update(path_param_shapes(
        ctx.graph.n_edge_types, ctx.max_path_len, h_emb=c.h_emb, heads=c.heads, d_k=c.d_k,
        d_llm=c.d_llm, r=c.r, u=c.u, n_layers=c.n_layers,
    ))
    shapes["graph.m"] = (1, ctx.paths.p)
    shapes["graph.w_p"] = (c.h_emb, 2)
    return shapes


def init_params(ctx: ModelContext, seed: int) -> ModelParams:
    """Glorot-normal matrices, zero biases, unit spatial scales, M = 0."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for name, shape in param_shapes(ctx).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b") or name in ("graph.m", "edge.scalar"):
            params[name] = np.zeros(shape)
        elif name == "spatial.scale":
            params[name] = np.ones(shape)
        else:
            fan_in, fan_out = shape[0], shape[-1]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)
    return params


def check_params(params: ModelParams, ctx: ModelContext) -> None:
    shapes = param_shapes(ctx)
    if set(shapes) != set(params):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise DataValidationError(f"parameter names mismatch (missing {missing[:3]}, extra {extra[:3]})")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise DataValidationError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# ---------- forward ----------

@dataclass(frozen=True)
class SharedTensors:
    bias: List[Tensor]
    importance: Tensor
    gene_text: Tensor
    path_text: Tensor


def shared_tensors(tp: Dict[str, Tensor], ctx: ModelContext) -> SharedTensors:
    """Cell-independent tensors: attention bias and path importance are computed once per pass."""
    return SharedTensors(
        bias=build_attention_bias(ctx.type_matrix, tp, ctx.config.heads),
        importance=path_importance(tp["graph.m"]),
        gene_text=nx.constant(ctx.gene_text),
        path_text=nx.constant(ctx.path_text),
    )


def forward_cell(
    tp: Dict[str, Tensor], ctx: ModelContext, shared: SharedTensors, expression: np.ndarray
) -> Tuple[Tensor, Tensor]:
    """Returns (logits (1, 2), final graph embedding G (1, h_emb)) for one cell."""
    c = ctx.config
    x = expand_input(expression, shared.gene_text, tp)
    h = centrality_encode(x, ctx.degrees, tp, c.d_max)
    layer_embeddings = []
    for layer in range(c.n_layers):
        h = gene_layer_forward(h, shared.bias, tp, layer, heads=c.heads, d_k=c.d_k)
        p_layer = path_layer_forward(h, ctx.index, shared.path_text, tp, layer, heads=c.heads, d_k=c.d_k)
        layer_embeddings.append(layer_graph_embedding(shared.importance, p_layer))
    g = jumping_knowledge(layer_embeddings)
    return classify_logits(g, tp["graph.w_p"]), g


def batch_loss(
    params: ModelParams, ctx: ModelContext, expression: np.ndarray, labels: Sequence[int], *, with_grad: bool = True
) -> Tuple[float, Optional[Dict[str, np.ndarray]]]:
    """Mean cross-entropy over a batch of cells, plus gradients when requested."""
    if len(labels) == 0:
        raise DataValidationError("empty batch")
    tape = GradTape()
    tp = tape.watch(params) if with_grad else {k: nx.constant(v) for k, v in params.items()}
    shared = shared_tensors(tp, ctx)
    losses = []
    for row, label in zip(expression, labels):
        logits, _ = forward_cell(tp, ctx, shared, row)
        losses.append(nx.cross_entropy(logits, int(label)))
    loss = nx.scale(nx.add_n(losses), 1.0 / len(losses))
    if not with_grad:
        return float(loss.data), None
    return float(loss.data), nx.backward(tape, loss)


def predict(params: ModelParams, ctx: ModelContext, expression: np.ndarray) -> List[Prediction]:
    """Per-cell predictions; each depends only on its own expression row."""
    tp = {k: nx.constant(v) for k, v in params.items()}
    shared = shared_tensors(tp, ctx)
    out = []
    for row in np.atleast_2d(expression):
        _, g = forward_cell(tp, ctx, shared, row)
        out.append(classify(g, tp["graph.w_p"]))
    return out
