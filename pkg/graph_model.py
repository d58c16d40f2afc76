"""graph_model.py

Gene graphs, path lists and expression datasets: the in-memory types, their
TSV readers/writers, degree counts, the flattened path scatter index and a
synthetic generator with a planted signal path.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DataValidationError

logger = logging.getLogger(__name__)

NODE_COLUMNS = ["gene_id", "symbol", "description"]
EDGE_COLUMNS = ["src_id", "dst_id", "edge_type"]
LABEL_COLUMNS = ["cell_id", "label", "population", "time"]


def _fingerprint(payload) -> int:
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return int.from_bytes(hashlib.sha256(raw).digest()[:8], "little")


# ---------- types ----------

@dataclass(frozen=True)
class Gene:
    gene_id: str
    symbol: str
    description: Optional[str] = None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    edge_type: int


@dataclass(frozen=True)
class GeneGraph:
    genes: Tuple[Gene, ...]
    edges: Tuple[Edge, ...]
    n_edge_types: int
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)
    _edge_types: Dict[Tuple[int, int], int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index: Dict[str, int] = {}
        for i, g in enumerate(self.genes):
            if g.gene_id in index:
                raise DataValidationError(f"duplicate gene_id {g.gene_id!r}")
            index[g.gene_id] = i
        pairs: Dict[Tuple[int, int], int] = {}
        for e in self.edges:
            if not (0 <= e.src < len(self.genes) and 0 <= e.dst < len(self.genes)):
                raise DataValidationError(f"edge endpoint out of range: {e}")
            if (e.src, e.dst) in pairs:
                raise DataValidationError(f"duplicate edge {self.genes[e.src].gene_id}->{self.genes[e.dst].gene_id}")
            if not 0 <= e.edge_type < self.n_edge_types:
                raise DataValidationError(f"edge_type {e.edge_type} outside [0, {self.n_edge_types})")
            pairs[(e.src, e.dst)] = e.edge_type
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_edge_types", pairs)

    @property
    def n(self) -> int:
        return len(self.genes)

    @property
    def gene_ids(self) -> List[str]:
        return [g.gene_id for g in self.genes]

    def index_of(self, gene_id: str) -> int:
        try:
            return self._index[gene_id]
        except KeyError:
            raise DataValidationError(f"unknown gene_id {gene_id!r}") from None

    def has_gene(self, gene_id: str) -> bool:
        return gene_id in self._index

    def edge_type(self, src: int, dst: int) -> Optional[int]:
        return self._edge_types.get((src, dst))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for e in self.edges:
            a[e.src, e.dst] = 1.0
        return a

    def edge_type_matrix(self) -> np.ndarray:
        """n×n edge types with NO_EDGE off-edge and SELF on the diagonal."""
        t = np.full((self.n, self.n), self.no_edge_type, dtype=np.int64)
        for e in self.edges:
            t[e.src, e.dst] = e.edge_type
        np.fill_diagonal(t, self.self_type)
        return t

    @property
    def no_edge_type(self) -> int:
        return self.n_edge_types

    @property
    def self_type(self) -> int:
        return self.n_edge_types + 1

    @property
    def terminal_type(self) -> int:
        return self.n_edge_types

    def fingerprint(self) -> int:
        return _fingerprint({
            "genes": [g.gene_id for g in self.genes],
            "edges": [[e.src, e.dst, e.edge_type] for e in self.edges],
            "n_edge_types": self.n_edge_types,
        })


@dataclass(frozen=True)
class PathList:
    path_ids: Tuple[str, ...]
    paths: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.path_ids) != len(self.paths):
            raise DataValidationError("path_ids and paths differ in length")
        if len(set(self.path_ids)) != len(self.path_ids):
            raise DataValidationError("duplicate path_id")

    @property
    def p(self) -> int:
        return len(self.paths)

    @property
    def lengths(self) -> List[int]:
        return [len(x) for x in self.paths]

    @property
    def max_length(self) -> int:
        return max(self.lengths, default=0)

    def fingerprint(self) -> int:
        return _fingerprint({"ids": list(self.path_ids), "paths": [list(x) for x in self.paths]})


@dataclass(frozen=True, eq=False)
class ScatterIndex:
    flat_nodes: np.ndarray
    segment_ids: np.ndarray
    positions: np.ndarray
    pair_edge_types: np.ndarray
    num_paths: int
    terminal_type: int

    @property
    def k(self) -> int:
        return int(self.flat_nodes.shape[0])

    def regroup(self) -> List[Tuple[int, ...]]:
        groups: List[List[int]] = [[] for _ in range(self.num_paths)]
        for node, seg in zip(self.flat_nodes.tolist(), self.segment_ids.tolist()):
            groups[seg].append(node)
        return [tuple(g) for g in groups]


@dataclass(frozen=True)
class PathViolation:
    path_index: int
    position: int
    message: str


@dataclass(frozen=True, eq=False)
class ExpressionDataset:
    cell_ids: Tuple[str, ...]
    expression: np.ndarray
    labels: np.ndarray
    populations: Tuple[Optional[str], ...]
    times: Tuple[Optional[float], ...]

    def __post_init__(self):
        c = len(self.cell_ids)
        if self.expression.ndim != 2 or self.expression.shape[0] != c:
            raise DataValidationError("expression matrix must have one row per cell")
        if self.labels.shape != (c,) or len(self.populations) != c or len(self.times) != c:
            raise DataValidationError("per-cell annotations differ in length")
        if c and not np.isin(self.labels, (0, 1)).all():
            raise DataValidationError("labels must be 0 or 1")
        for t in self.times:
            if t is not None and not (np.isfinite(t) and t >= 0):
                raise DataValidationError(f"time annotation must be a nonnegative real, got {t}")

    def __len__(self) -> int:
        return len(self.cell_ids)

    @property
    def n(self) -> int:
        return int(self.expression.shape[1])

    def subset(self, indices: Sequence[int]) -> "ExpressionDataset":
        idx = list(indices)
        return ExpressionDataset(
            cell_ids=tuple(self.cell_ids[i] for i in idx),
            expression=self.expression[idx].copy(),
            labels=self.labels[idx].copy(),
            populations=tuple(self.populations[i] for i in idx),
            times=tuple(self.times[i] for i in idx),
        )

    def population_tags(self) -> List[str]:
        """Distinct population tags in first-seen order."""
        seen: Dict[str, None] = {}
        for p in self.populations:
            if p is not None:
                seen.setdefault(p, None)
        return list(seen)


# ---------- reading ----------

def _read_tsv(path, *, header="infer", names=None) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, header=header, names=names)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=names or [])
    except pd.errors.ParserError as e:
        raise DataValidationError(f"malformed row: {e}", file=str(path)) from None
    except OSError as e:
        raise DataValidationError(f"cannot read: {e.strerror or e}", file=str(path)) from None
    return df.fillna("")


def _check_header(df: pd.DataFrame, expected: List[str], path) -> None:
    if list(df.columns) != expected and not (df.empty and len(df.columns) == 0):
        raise DataValidationError(
            f"expected header {'/'.join(expected)}, got {'/'.join(map(str, df.columns))}", file=str(path), line=1
        )


def load_gene_graph(nodes_file, edges_file, n_edge_types: Optional[int] = None) -> GeneGraph:
    """Read the node and edge TSVs; node indices follow gene-file order."""
    nodes = _read_tsv(nodes_file)
    _check_header(nodes, NODE_COLUMNS, nodes_file)

    genes: List[Gene] = []
    seen: Dict[str, int] = {}
    for row_no, row in enumerate(nodes.itertuples(index=False), start=2):
        gene_id = row.gene_id.strip()
        if not gene_id:
            raise DataValidationError("empty gene_id", file=str(nodes_file), line=row_no)
        if gene_id in seen:
            raise DataValidationError(f"duplicate gene_id {gene_id!r}", file=str(nodes_file), line=row_no)
        seen[gene_id] = len(genes)
        description = row.description.strip() or None
        genes.append(Gene(gene_id, row.symbol.strip(), description))

    edges_df = _read_tsv(edges_file)
    _check_header(edges_df, EDGE_COLUMNS, edges_file)

    edges: List[Edge] = []
    pairs = set()
    for row_no, row in enumerate(edges_df.itertuples(index=False), start=2):
        src, dst = row.src_id.strip(), row.dst_id.strip()
        for gid in (src, dst):
            if gid not in seen:
                raise DataValidationError(f"edge references unknown gene {gid!r}", file=str(edges_file), line=row_no)
        try:
            edge_type = int(row.edge_type)
        except ValueError:
            raise DataValidationError(f"edge_type {row.edge_type!r} is not an integer", file=str(edges_file), line=row_no) from None
        if edge_type < 0:
            raise DataValidationError(f"negative edge_type {edge_type}", file=str(edges_file), line=row_no)
        key = (seen[src], seen[dst])
        if key in pairs:
            raise DataValidationError(f"duplicate edge {src}->{dst}", file=str(edges_file), line=row_no)
        pairs.add(key)
        edges.append(Edge(key[0], key[1], edge_type))

    observed = max((e.edge_type for e in edges), default=-1) + 1
    if n_edge_types is None:
        n_edge_types = max(1, observed)
    elif observed > n_edge_types:
        raise DataValidationError(f"edge types up to {observed - 1} exceed configured count {n_edge_types}", file=str(edges_file))
    return GeneGraph(tuple(genes), tuple(edges), n_edge_types)


def load_paths(paths_file, graph: GeneGraph) -> PathList:
    df = _read_tsv(paths_file, header=None, names=["path_id", "genes"])
    ids: List[str] = []
    paths: List[Tuple[int, ...]] = []
    for row_no, row in enumerate(df.itertuples(index=False), start=1):
        gene_ids = [g.strip() for g in row.genes.split(",") if g.strip()]
        nodes = []
        for gid in gene_ids:
            if not graph.has_gene(gid):
                raise DataValidationError(f"path references unknown gene {gid!r}", file=str(paths_file), line=row_no)
            nodes.append(graph.index_of(gid))
        ids.append(row.path_id.strip())
        paths.append(tuple(nodes))
    return PathList(tuple(ids), tuple(paths))


def load_dataset(expression_file, labels_file, graph: GeneGraph) -> ExpressionDataset:
    """Read the expression matrix and labels, aligned to graph node order.

    Graph genes missing from the matrix are filled with 0.0 (logged).
    """
    expr = _read_tsv(expression_file)
    if len(expr.columns) == 0 or expr.columns[0] != "cell_id":
        raise DataValidationError("first column must be cell_id", file=str(expression_file), line=1)

    cell_ids = expr["cell_id"].str.strip().tolist()
    if len(set(cell_ids)) != len(cell_ids):
        raise DataValidationError("duplicate cell_id", file=str(expression_file))

    values = expr.drop(columns=["cell_id"])
    try:
        values = values.apply(lambda col: pd.to_numeric(col, errors="raise")).astype(float)
    except (ValueError, TypeError) as e:
        raise DataValidationError(f"non-numeric expression value: {e}", file=str(expression_file)) from None
    if not np.isfinite(values.to_numpy()).all():
        raise DataValidationError("expression contains missing or non-finite values", file=str(expression_file))

    missing = [g for g in graph.gene_ids if g not in values.columns]
    if missing:
        logger.warning("%d graph genes missing from %s; using 0.0 (first: %s)", len(missing), expression_file, missing[0])
    matrix = values.reindex(columns=graph.gene_ids, fill_value=0.0).to_numpy(dtype=np.float64)

    labels_df = _read_tsv(labels_file)
    _check_header(labels_df, LABEL_COLUMNS, labels_file)
    annotations: Dict[str, Tuple[int, Optional[str], Optional[float]]] = {}
    for row_no, row in enumerate(labels_df.itertuples(index=False), start=2):
        cell_id = row.cell_id.strip()
        if cell_id in annotations:
            raise DataValidationError(f"duplicate cell_id {cell_id!r}", file=str(labels_file), line=row_no)
        if row.label.strip() not in ("0", "1"):
            raise DataValidationError(f"label must be 0 or 1, got {row.label!r}", file=str(labels_file), line=row_no)
        time: Optional[float] = None
        if row.time.strip():
            try:
                time = float(row.time)
            except ValueError:
                raise DataValidationError(f"bad time {row.time!r}", file=str(labels_file), line=row_no) from None
        annotations[cell_id] = (int(row.label), row.population.strip() or None, time)

    unlabeled = [c for c in cell_ids if c not in annotations]
    if unlabeled:
        raise DataValidationError(f"{len(unlabeled)} cells have no label (first: {unlabeled[0]!r})", file=str(labels_file))

    return ExpressionDataset(
        cell_ids=tuple(cell_ids),
        expression=matrix,
        labels=np.array([annotations[c][0] for c in cell_ids], dtype=np.int64),
        populations=tuple(annotations[c][1] for c in cell_ids),
        times=tuple(annotations[c][2] for c in cell_ids),
    )


# ---------- writing ----------

def _write_tsv(df: pd.DataFrame, path, *, header: bool = True) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep="\t", index=False, header=header, lineterminator="\n", float_format="%.17g")


def save_gene_graph(graph: GeneGraph, nodes_file, edges_file) -> None:
    _write_tsv(pd.DataFrame(
        [(g.gene_id, g.symbol, g.description or "") for g in graph.genes], columns=NODE_COLUMNS
    ), nodes_file)
    ids = graph.gene_ids
    _write_tsv(pd.DataFrame(
        [(ids[e.src], ids[e.dst], e.edge_type) for e in graph.edges], columns=EDGE_COLUMNS
    ), edges_file)


def save_paths(paths: PathList, graph: GeneGraph, paths_file) -> None:
    ids = graph.gene_ids
    rows = [(pid, ",".join(ids[v] for v in nodes)) for pid, nodes in zip(paths.path_ids, paths.paths)]
    _write_tsv(pd.DataFrame(rows, columns=["path_id", "genes"]), paths_file, header=False)


def save_dataset(dataset: ExpressionDataset, graph: GeneGraph, expression_file, labels_file) -> None:
    expr = pd.DataFrame(dataset.expression, columns=graph.gene_ids)
    expr.insert(0, "cell_id", list(dataset.cell_ids))
    _write_tsv(expr, expression_file)
    _write_tsv(pd.DataFrame(
        [
            (cid, int(label), pop or "", "" if t is None else repr(float(t)))
            for cid, label, pop, t in zip(dataset.cell_ids, dataset.labels, dataset.populations, dataset.times)
        ],
        columns=LABEL_COLUMNS,
    ), labels_file)


# ---------- structure ----------

def validate_paths(paths: PathList, graph: GeneGraph) -> List[PathViolation]:
    """Every (path, position) whose step is not a graph edge; empty list means valid."""
    violations: List[PathViolation] = []
    for m, nodes in enumerate(paths.paths):
        if len(nodes) < 2:
            violations.append(PathViolation(m, 0, "path too short"))
            continue
        for i in range(len(nodes) - 1):
            if graph.edge_type(nodes[i], nodes[i + 1]) is None:
                a, b = graph.genes[nodes[i]].gene_id, graph.genes[nodes[i + 1]].gene_id
                violations.append(PathViolation(m, i, f"missing edge {a}->{b}"))
    return violations


def build_scatter_index(paths: PathList, graph: GeneGraph) -> ScatterIndex:
    """Flatten paths path-major, position-minor (k = sum of path lengths)."""
    flat, seg, pos, types = [], [], [], []
    for m, nodes in enumerate(paths.paths):
        for i, v in enumerate(nodes):
            flat.append(v)
            seg.append(m)
            pos.append(i)
            if i + 1 < len(nodes):
                t = graph.edge_type(v, nodes[i + 1])
                types.append(graph.terminal_type if t is None else t)
            else:
                types.append(graph.terminal_type)
    as_int = lambda xs: np.asarray(xs, dtype=np.int64)
    return ScatterIndex(as_int(flat), as_int(seg), as_int(pos), as_int(types), paths.p, graph.terminal_type)


def compute_degrees(graph: GeneGraph) -> Tuple[np.ndarray, np.ndarray]:
    src = np.array([e.src for e in graph.edges], dtype=np.int64)
    dst = np.array([e.dst for e in graph.edges], dtype=np.int64)
    return np.bincount(dst, minlength=graph.n), np.bincount(src, minlength=graph.n)


# ---------- synthetic data ----------

def synthesize_dataset(
    n_genes: int,
    n_paths: int,
    n_cells: int,
    signal_path_id: int,
    effect_size: float,
    seed: int,
    *,
    n_edge_types: int = 2,
    n_populations: int = 4,
    max_path_len: int = 5,
    extra_edge_prob: float = 0.1,
    drift: float = 0.5,
) -> Tuple[GeneGraph, PathList, ExpressionDataset]:
    """Random DAG with planted paths; label-1 cells are shifted on the signal path.

    Populations `pop0..` carry time = their index and a small time-proportional
    drift on a few non-signal genes, so trajectories are not degenerate.
    """
    if n_genes < 2 or n_paths < 1 or n_cells < 1 or n_edge_types < 1 or n_populations < 1:
        raise DataValidationError("n_genes >= 2 and n_paths, n_cells, n_edge_types, n_populations >= 1 required")
    if not 0 <= signal_path_id < n_paths:
        raise DataValidationError(f"signal_path_id {signal_path_id} outside [0, {n_paths})")
    if effect_size < 0:
        raise DataValidationError("effect_size must be nonnegative")

    rng = np.random.default_rng(seed)
    rank = np.empty(n_genes, dtype=np.int64)
    rank[rng.permutation(n_genes)] = np.arange(n_genes)

    genes = []
    for i in range(n_genes):
        symbol = f"SYN{i + 1}"
        description = None if i % 3 == 2 else f"{symbol} is a synthetic gene acting in a simulated signaling cascade."
        genes.append(Gene(f"G{i + 1:04d}", symbol, description))

    longest = min(max_path_len, n_genes)
    paths: List[Tuple[int, ...]] = []
    for _ in range(n_paths):
        length = int(rng.integers(2, longest + 1))
        chosen = rng.choice(n_genes, size=length, replace=False)
        paths.append(tuple(int(v) for v in sorted(chosen, key=lambda v: rank[v])))

    pairs = {(a, b) for nodes in paths for a, b in zip(nodes, nodes[1:])}
    for u in range(n_genes):
        for v in range(n_genes):
            if rank[u] < rank[v] and (u, v) not in pairs and rng.random() < extra_edge_prob:
                pairs.add((u, v))
    edges = tuple(Edge(u, v, int(rng.integers(n_edge_types))) for u, v in sorted(pairs))
    graph = GeneGraph(tuple(genes), edges, n_edge_types)
    path_list = PathList(tuple(f"P{m + 1:03d}" for m in range(n_paths)), tuple(paths))

    labels = rng.integers(0, 2, size=n_cells)
    pops = rng.integers(0, n_populations, size=n_cells)
    expression = rng.standard_normal((n_cells, n_genes))
    signal = sorted(set(paths[signal_path_id]))
    expression[np.ix_(labels == 1, signal)] += effect_size
    drifting = [g for g in range(n_genes) if g not in set(signal)][:3]
    if drifting:
        expression[:, drifting] += drift * pops[:, None]

    dataset = ExpressionDataset(
        cell_ids=tuple(f"cell{i + 1:05d}" for i in range(n_cells)),
        expression=expression,
        labels=labels.astype(np.int64),
        populations=tuple(f"pop{int(p)}" for p in pops),
        times=tuple(float(p) for p in pops),
    )
    return graph, path_list, dataset
