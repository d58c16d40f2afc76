"""net_eval.py

Scores an inferred edge-confidence network against a gold standard: restrict
both to shared genes, rank by confidence and take the area under the stepwise
precision/recall curve (average precision with |gold| in the denominator).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

import pandas as pd

from errors import DataValidationError

logger = logging.getLogger(__name__)

SOURCE_HEADERS = {"regulator_gene", "regulator", "tf", "source", "src", "src_gene", "from", "gene1"}
TARGET_HEADERS = {"target_gene", "target", "dst", "dst_gene", "to", "gene2"}

EdgeKey = Tuple[str, str]
RankedEdge = Tuple[str, str, float]


@dataclass(frozen=True)
class GoldStandard:
    edges: FrozenSet[EdgeKey]

    @property
    def gene_set(self) -> Set[str]:
        return {g for e in self.edges for g in e}

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class PRPoint:
    rank: int
    src: str
    dst: str
    hit: bool
    precision: float
    recall: float


@dataclass(frozen=True)
class EvalReport:
    n_inferred: int
    n_gold: int
    points: Tuple[PRPoint, ...]
    area: float


def load_gold_standard(file) -> GoldStandard:
    path = Path(file)
    try:
        df = pd.read_csv(path, sep="\t", header=None, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataValidationError(f"cannot read gold standard: {exc}", file=str(path)) from None
    except pd.errors.EmptyDataError:
        raise DataValidationError("gold standard file is empty", file=str(path)) from None
    if df.shape[1] < 2:
        raise DataValidationError("gold standard needs two tab-separated columns", file=str(path))
    src_head, dst_head = (str(v).strip().lower() for v in df.iloc[0, :2])
    start = 1
    if src_head in SOURCE_HEADERS and dst_head in TARGET_HEADERS:
        df = df.iloc[1:]
        start = 2
    edges = set()
    for line, (src, dst) in enumerate(df.iloc[:, :2].itertuples(index=False), start=start):
        src, dst = str(src).strip(), str(dst).strip()
        if not src or not dst:
            raise DataValidationError("empty gene name", file=str(path), line=line)
        edges.add((src, dst))
    return GoldStandard(frozenset(edges))


def symmetrize(inferred: Mapping[EdgeKey, float], gold: GoldStandard) -> Tuple[Dict[EdgeKey, float], GoldStandard]:
    """Undirected matching: key every edge by its sorted gene pair."""
    net: Dict[EdgeKey, float] = {}
    for (a, b), c in inferred.items():
        key = (min(a, b), max(a, b))
        net[key] = max(net.get(key, c), c)
    return net, GoldStandard(frozenset((min(a, b), max(a, b)) for a, b in gold.edges))


def filter_to_intersection(
    inferred: Mapping[EdgeKey, float], gold: GoldStandard, expressed_genes: Iterable[str]
) -> Tuple[Dict[EdgeKey, float], GoldStandard]:
    keep = gold.gene_set & set(expressed_genes)
    net = {(a, b): c for (a, b), c in inferred.items() if a in keep and b in keep}
    filtered = GoldStandard(frozenset((a, b) for a, b in gold.edges if a in keep and b in keep))
    if not filtered.edges:
        raise DataValidationError("nothing to evaluate: no gold edges between expressed genes")
    logger.info("net-eval: %d inferred and %d gold edges after filtering", len(net), len(filtered))
    return net, filtered


def rank_and_truncate(inferred: Mapping[EdgeKey, float], max_edges: Optional[int] = None) -> List[RankedEdge]:
    ranked = sorted(((a, b, float(c)) for (a, b), c in inferred.items()), key=lambda e: (-e[2], e[0], e[1]))
    if max_edges is not None:
        if max_edges < 0:
            raise DataValidationError("max_edges must be >= 0")
        ranked = ranked[:max_edges]
    return ranked


def fscore_area(ranked: List[RankedEdge], gold: GoldStandard) -> EvalReport:
    if not gold.edges:
        raise DataValidationError("gold standard is empty")
    total = len(gold.edges)
    hits = 0
    area = 0.0
    points = []
    for t, (a, b, _) in enumerate(ranked, start=1):
        hit = (a, b) in gold.edges
        if hit:
            hits += 1
        precision = hits / t
        if hit:
            area += precision / total
        points.append(PRPoint(t, a, b, hit, precision, hits / total))
    return EvalReport(n_inferred=len(ranked), n_gold=total, points=tuple(points), area=area)


def evaluate_network(
    inferred: Mapping[EdgeKey, float],
    gold: GoldStandard,
    expressed_genes: Iterable[str],
    *,
    max_edges: Optional[int] = None,
    undirected: bool = False,
) -> EvalReport:
    if undirected:
        inferred, gold = symmetrize(inferred, gold)
    net, filtered = filter_to_intersection(inferred, gold, expressed_genes)
    return fscore_area(rank_and_truncate(net, max_edges), filtered)
