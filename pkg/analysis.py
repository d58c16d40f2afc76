"""analysis.py

Downstream outputs of a trained model: ranked paths and the inferred edge
network, per-population profiles and cell importance, and the MST trajectory
between populations pruned by time flow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from errors import DataValidationError
from graph_encoder import importance_values
from graph_model import ExpressionDataset, GeneGraph, PathList
from model import ModelContext, ModelParams, predict
from text_embedding import describe_path

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5
ARROW = "->"

TreeEdge = Tuple[int, int, float]


# ---------- ranked paths ----------

@dataclass(frozen=True)
class RankedPath:
    path_id: str
    importance: float
    nodes: Tuple[int, ...]
    gene_ids: Tuple[str, ...]
    symbols: Tuple[str, ...]
    text: str

    @property
    def arrow_symbols(self) -> str:
        return ARROW.join(self.symbols)


@dataclass(frozen=True)
class RankedPaths:
    entries: Tuple[RankedPath, ...]
    note: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def path_ids(self) -> List[str]:
        return [e.path_id for e in self.entries]


def extract_top_paths(params: ModelParams, paths: PathList, graph: GeneGraph, k: int) -> RankedPaths:
    if k < 1:
        raise DataValidationError("k must be >= 1")
    importance = importance_values(params["graph.m"])
    values = importance.values
    if values.size != paths.p:
        raise DataValidationError(f"{values.size} path logits for {paths.p} paths")
    note = ""
    if k > paths.p:
        note = f"k={k} exceeds path count {paths.p}; returning all paths"
        logger.warning(note)
        k = paths.p
    order = [int(m) for m in importance.ranking()[:k]]
    entries = tuple(
        RankedPath(
            path_id=paths.path_ids[m],
            importance=float(values[m]),
            nodes=tuple(paths.paths[m]),
            gene_ids=tuple(graph.genes[v].gene_id for v in paths.paths[m]),
            symbols=tuple(graph.genes[v].symbol or graph.genes[v].gene_id for v in paths.paths[m]),
            text=describe_path(paths.paths[m], graph),
        )
        for m in order
    )
    return RankedPaths(entries, note)


def paths_to_edge_confidence(ranked: RankedPaths) -> Dict[Tuple[str, str], float]:
    """Each consecutive gene_id pair scores the maximum importance of the paths containing it."""
    conf: Dict[Tuple[str, str], float] = {}
    for entry in ranked.entries:
        for a, b in zip(entry.gene_ids, entry.gene_ids[1:]):
            conf[(a, b)] = max(conf.get((a, b), entry.importance), entry.importance)
    return conf


# ---------- populations ----------

@dataclass(eq=False)
class PopulationProfile:
    population: str
    count_diseased: int
    count_healthy: int
    mean_expr_diseased: np.ndarray
    mean_expr_healthy: np.ndarray
    embedding: Optional[np.ndarray] = None
    time: Optional[float] = None


def population_profiles(dataset: ExpressionDataset, order: Optional[Sequence[str]] = None) -> List[PopulationProfile]:
    tags = list(order) if order is not None else sorted(dataset.population_tags())
    pops = np.array([p if p is not None else "" for p in dataset.populations], dtype=object)
    out = []
    for tag in tags:
        members = pops == tag
        sick = members & (dataset.labels == 1)
        well = members & (dataset.labels == 0)
        mean = lambda mask: dataset.expression[mask].mean(axis=0) if mask.any() else np.zeros(dataset.n)
        times = [dataset.times[i] for i in np.flatnonzero(members) if dataset.times[i] is not None]
        out.append(PopulationProfile(
            population=tag,
            count_diseased=int(sick.sum()),
            count_healthy=int(well.sum()),
            mean_expr_diseased=mean(sick),
            mean_expr_healthy=mean(well),
            time=float(np.mean(times)) if times else None,
        ))
    return out


def cell_importance(profile: PopulationProfile, alpha: float = DEFAULT_ALPHA) -> float:
    if alpha < 0:
        raise DataValidationError("alpha must be >= 0")
    freq = abs(profile.count_diseased - profile.count_healthy)
    expr = float(np.abs(profile.mean_expr_diseased - profile.mean_expr_healthy).sum())
    return alpha * freq + expr


def population_embedding(params: ModelParams, ctx: ModelContext, dataset: ExpressionDataset, population: str) -> np.ndarray:
    """Mean final graph embedding over the population's cells."""
    rows = [i for i, p in enumerate(dataset.populations) if p == population]
    if not rows:
        raise DataValidationError(f"population {population!r} has no cells")
    preds = predict(params, ctx, dataset.expression[rows])
    return np.mean([p.graph_embedding for p in preds], axis=0)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataValidationError("cosine distance is undefined for a zero vector")
    return float(np.clip(1.0 - float(a @ b) / (na * nb), 0.0, 2.0))


# ---------- trajectory ----------

def build_mst(distances: np.ndarray) -> List[TreeEdge]:
    """Kruskal over (weight, i, j) order; returns edges (i, j, d) with i < j."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 2:
        raise DataValidationError("distance matrix must be square with at least 2 nodes")
    if not np.all(np.isfinite(d)) or not np.array_equal(d, d.T):
        raise DataValidationError("distance matrix must be finite and symmetric")
    n = d.shape[0]
    candidates = sorted((float(d[i, j]), i, j) for i in range(n) for j in range(i + 1, n))
    sets = UnionFind(range(n))
    tree: List[TreeEdge] = []
    for w, i, j in candidates:
        if sets[i] != sets[j]:
            sets.union(i, j)
            tree.append((i, j, w))
            if len(tree) == n - 1:
                break
    return tree


def orient_toward(tree: Sequence[TreeEdge], target: int) -> List[TreeEdge]:
    """Direct every tree edge along the unique tree path toward target."""
    g = nx.Graph()
    g.add_weighted_edges_from(tree)
    if target not in g:
        raise DataValidationError(f"target {target} is not a tree node")
    parent = dict(nx.bfs_predecessors(g, target))
    return [(i, j, w) if parent.get(i) == j else (j, i, w) for i, j, w in tree]


def prune_by_time(tree: Sequence[TreeEdge], times: Sequence[Optional[float]], target: int) -> List[TreeEdge]:
    """Keep oriented edges (i -> j) with Time(i) < Time(j)."""
    nodes = {v for i, j, _ in tree for v in (i, j)}
    missing = sorted(v for v in nodes if v >= len(times) or times[v] is None)
    if missing:
        raise DataValidationError(f"tree nodes without time annotation: {missing}")
    return [(i, j, w) for i, j, w in orient_toward(tree, target) if times[i] < times[j]]


@dataclass(frozen=True)
class TrajectoryGraph:
    nodes: Tuple[str, ...]
    mst_edges: Tuple[TreeEdge, ...]
    pruned_edges: Tuple[TreeEdge, ...]
    target: int
    oriented_edges: Tuple[TreeEdge, ...] = field(default=())

    def rows(self) -> List[Tuple[str, str, float, int]]:
        kept = {(i, j) for i, j, _ in self.pruned_edges}
        return [(self.nodes[i], self.nodes[j], w, int((i, j) in kept)) for i, j, w in self.oriented_edges]


def infer_trajectory(
    params: ModelParams,
    ctx: ModelContext,
    dataset: ExpressionDataset,
    target: str,
    profiles: Optional[Sequence[PopulationProfile]] = None,
) -> TrajectoryGraph:
    profiles = list(profiles) if profiles is not None else population_profiles(dataset)
    tags = [p.population for p in profiles]
    if len(tags) < 2:
        raise DataValidationError("trajectory inference needs at least two populations")
    if target not in tags:
        raise DataValidationError(f"target population {target!r} not found")

    for prof in profiles:
        prof.embedding = population_embedding(params, ctx, dataset, prof.population)
    n = len(profiles)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = cosine_distance(profiles[i].embedding, profiles[j].embedding)

    t = tags.index(target)
    tree = build_mst(dist)
    pruned = prune_by_time(tree, [p.time for p in profiles], t)
    logger.info("trajectory: %d MST edges, %d retained toward %s", len(tree), len(pruned), target)
    return TrajectoryGraph(
        nodes=tuple(tags),
        mst_edges=tuple(tree),
        pruned_edges=tuple(pruned),
        target=t,
        oriented_edges=tuple(orient_toward(tree, t)),
    )
