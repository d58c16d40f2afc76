from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import DataValidationError
from graph_model import ExpressionDataset, GeneGraph, PathList, load_dataset, load_gene_graph, load_paths
from metrics import METRIC_COLUMNS, Metrics, compute_metrics
from text_embedding import EmbeddingStore, load_embedding_store
from training import (
    HistoryRow,
    TrainConfig,
    context_for_checkpoint,
    load_checkpoint,
    predict_positive,
    save_checkpoint,
    save_history,
    split_dataset,
    train,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")


def checkpoint_name(seed: int) -> str:
    return f"model_seed{seed}.tngm"


def history_name(seed: int) -> str:
    return f"history_seed{seed}.tsv"


def predictions_name(seed: int) -> str:
    return f"predictions_seed{seed}.tsv"


@dataclass(frozen=True)
class InputFiles:
    nodes: str
    edges: str
    paths: str
    expression: str
    labels: str
    embeddings: Optional[str] = None
    n_edge_types: Optional[int] = None

    def missing(self) -> List[str]:
        files = [self.nodes, self.edges, self.paths, self.expression, self.labels]
        if self.embeddings:
            files.append(self.embeddings)
        return [f for f in files if not Path(f).is_file()]


@dataclass(eq=False)
class LoadedInputs:
    graph: GeneGraph
    paths: PathList
    dataset: ExpressionDataset
    store: Optional[EmbeddingStore]


def load_inputs(files: InputFiles) -> LoadedInputs:
    graph = load_gene_graph(files.nodes, files.edges, files.n_edge_types)
    paths = load_paths(files.paths, graph)
    dataset = load_dataset(files.expression, files.labels, graph)
    store = load_embedding_store(files.embeddings) if files.embeddings else None
    if store is None:
        logger.warning("no embedding store given; every sentence embedding uses the mock fallback")
    return LoadedInputs(graph, paths, dataset, store)


def run_seeds(worker: Callable[[int], T], seeds: Sequence[int], *, jobs: int = 1, progress: bool = False) -> List[T]:
    """Run worker once per seed; results come back in seed-list order."""
    if not seeds:
        raise DataValidationError("seed list is empty")
    if jobs <= 1:
        return [worker(s) for s in tqdm(seeds, desc="seeds", disable=not progress)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(tqdm(pool.map(worker, seeds), total=len(seeds), desc="seeds", disable=not progress))


# ---------- train / eval per seed ----------

@dataclass(frozen=True)
class TrainOutcome:
    seed: int
    checkpoint: str
    best_epoch: int
    history: List[HistoryRow]


def train_seed(seed: int, *, config: TrainConfig, files: InputFiles, out_dir: str, progress: bool = False) -> TrainOutcome:
    inputs = load_inputs(files)
    cfg = replace(config, seed=seed)
    result = train(cfg, inputs.graph, inputs.paths, inputs.dataset, inputs.store, progress=progress)
    out = Path(out_dir)
    ckpt = out / checkpoint_name(seed)
    save_checkpoint(result.params, cfg, result.context, ckpt)
    save_history(result.history, out / history_name(seed))
    return TrainOutcome(seed, str(ckpt), result.best_epoch, result.history)


def train_seeds(config: TrainConfig, files: InputFiles, out_dir: str, seeds: Sequence[int], *,
                jobs: int = 1, progress: bool = False) -> List[TrainOutcome]:
    worker = partial(train_seed, config=config, files=files, out_dir=out_dir, progress=progress and jobs <= 1)
    return run_seeds(worker, seeds, jobs=jobs, progress=progress)


def eval_seed(seed: int, *, files: InputFiles, out_dir: str) -> Metrics:
    """Test-split metrics for one trained seed; writes its per-cell predictions."""
    inputs = load_inputs(files)
    out = Path(out_dir)
    ckpt = load_checkpoint(out / checkpoint_name(seed), inputs.graph, inputs.paths)
    ctx = context_for_checkpoint(ckpt, inputs.graph, inputs.paths, inputs.store)
    _, _, test_set = split_dataset(inputs.dataset, ckpt.config.split_ratios, ckpt.config.seed)
    if len(test_set) == 0:
        raise DataValidationError("test split is empty")
    probs = predict_positive(ckpt.params, ctx, test_set)
    save_predictions(test_set, probs, out / predictions_name(seed))
    return compute_metrics(test_set.labels, probs)


def eval_seeds(files: InputFiles, out_dir: str, seeds: Sequence[int], *, jobs: int = 1, progress: bool = False) -> List[Metrics]:
    return run_seeds(partial(eval_seed, files=files, out_dir=out_dir), seeds, jobs=jobs, progress=progress)


def save_predictions(split: ExpressionDataset, probs: np.ndarray, file) -> None:
    df = pd.DataFrame({"cell_id": list(split.cell_ids), "label": split.labels, "prob_positive": probs})
    df.to_csv(file, sep="\t", index=False, float_format="%.17g", lineterminator="\n")


def metrics_table(per_seed: Dict[int, Metrics], *, model: str = "tng") -> pd.DataFrame:
    """Per-seed rows, then mean and sample standard deviation rows."""
    rows = [{"model": model, "seed": str(s), **{k: getattr(m, k) for k in METRIC_COLUMNS}} for s, m in per_seed.items()]
    df = pd.DataFrame(rows, columns=["model", "seed", *METRIC_COLUMNS])
    values = df[METRIC_COLUMNS].astype(float)
    mean = {"model": model, "seed": "mean", **values.mean(skipna=True).to_dict()}
    std = {"model": model, "seed": "std", **values.std(ddof=1 if len(df) > 1 else 0, skipna=True).to_dict()}
    return pd.concat([df, pd.DataFrame([mean, std])], ignore_index=True)
