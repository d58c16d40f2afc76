"""training.py

Deterministic splits, the Adam training loop with best-validation selection,
evaluation, per-epoch history and the TNGM checkpoint format.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from errors import DataValidationError, FingerprintMismatchError, FormatError, NumericError
from graph_model import ExpressionDataset, GeneGraph, PathList
from metrics import Metrics, compute_metrics
from model import ModelConfig, ModelContext, ModelParams, batch_loss, build_context, check_params, init_params, predict
from text_embedding import EmbeddingStore

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TNGM"
CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ["epoch", "train_loss", "val_accuracy", "val_auc"]


@dataclass(frozen=True)
class TrainConfig:
    n_layers: int = 2
    h_emb: int = 64
    heads: int = 4
    d_k: int = 16
    r: int = 4
    u: int = 16
    d_llm: int = 768
    d_expand: int = 32
    d_max: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    split_ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    use_gene_text: bool = True
    use_path_text: bool = True

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def validate(self) -> None:
        self.model_config().validate()
        check_ratios(self.split_ratios)
        if self.epochs < 0 or self.batch_size < 1:
            raise DataValidationError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DataValidationError("learning_rate must be positive and betas in [0, 1)")

    def to_dict(self) -> Dict[str, object]:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, object]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise DataValidationError(f"unknown training config keys: {unknown}")
        d = dict(d)
        if "split_ratios" in d:
            d["split_ratios"] = tuple(float(x) for x in d["split_ratios"])
        return cls(**d)


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_auc: float


@dataclass
class TrainResult:
    params: ModelParams
    history: List[HistoryRow]
    context: ModelContext
    best_epoch: int = 0


# ---------- splits ----------

def check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(not r > 0 for r in ratios):
        raise DataValidationError(f"split ratios must be three positive numbers, got {list(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataValidationError(f"split ratios must sum to 1, got {sum(ratios)}")


def split_sizes(c: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Floor allocation for validation and test; the remainder goes to train."""
    n_val = int(math.floor(ratios[1] * c + 1e-9))
    n_test = int(math.floor(ratios[2] * c + 1e-9))
    return c - n_val - n_test, n_val, n_test


def split_dataset(
    dataset: ExpressionDataset, ratios: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0
) -> Tuple[ExpressionDataset, ExpressionDataset, ExpressionDataset]:
    check_ratios(ratios)
    c = len(dataset)
    if c < 3:
        raise DataValidationError(f"dataset has {c} cells; at least 3 are needed to split")
    n_train, n_val, _ = split_sizes(c, ratios)
    order = np.random.default_rng(seed).permutation(c)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(dataset.subset(sorted(int(i) for i in part)) for part in parts)


# ---------- optimizer ----------

@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: ModelParams, grads: Dict[str, np.ndarray]) -> ModelParams:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out: ModelParams = {}
        for name in sorted(params):
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            out[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


# ---------- train / evaluate ----------

def predict_positive(params: ModelParams, ctx: ModelContext, dataset: ExpressionDataset) -> np.ndarray:
    if len(dataset) == 0:
        return np.zeros(0)
    return np.array([p.positive for p in predict(params, ctx, dataset.expression)])


def evaluate(params: ModelParams, ctx: ModelContext, split: ExpressionDataset) -> Metrics:
    if len(split) == 0:
        raise DataValidationError("cannot evaluate an empty split")
    return compute_metrics(split.labels, predict_positive(params, ctx, split))


def train(
    config: TrainConfig,
    graph: GeneGraph,
    paths: PathList,
    dataset: ExpressionDataset,
    store: Optional[EmbeddingStore],
    *,
    progress: bool = False,
) -> TrainResult:
    """Minimize mean cross-entropy with Adam; return the best-validation-accuracy parameters."""
    config.validate()
    if dataset.n != graph.n:
        raise DataValidationError(f"expression has {dataset.n} genes, graph has {graph.n}")
    ctx = build_context(config.model_config(), graph, paths, store, seed=config.seed)
    train_set, val_set, _ = split_dataset(dataset, config.split_ratios, config.seed)

    params = init_params(ctx, config.seed)
    best, best_acc, best_loss, best_epoch = params, -1.0, math.inf, 0
    opt = AdamState(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng([config.seed, 1])
    history: List[HistoryRow] = []

    if len(val_set) == 0:
        logger.warning("validation split is empty; keeping the final epoch's parameters")

    epochs = tqdm(range(1, config.epochs + 1), desc="train", disable=not progress)
    for epoch in epochs:
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                loss, grads = batch_loss(params, ctx, train_set.expression[idx], train_set.labels[idx])
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} step {step}: {exc}") from exc
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch} step {step}")
            params = opt.step(params, grads)
            total += loss * len(idx)
            seen += len(idx)

        train_loss = total / seen if seen else float("nan")
        if len(val_set):
            m = evaluate(params, ctx, val_set)
            val_acc, val_auc = m.accuracy, (m.auc if m.auc is not None else float("nan"))
        else:
            val_acc, val_auc = float("nan"), float("nan")
        history.append(HistoryRow(epoch, train_loss, val_acc, val_auc))
        logger.debug("epoch %d loss=%.6f val_acc=%.4f", epoch, train_loss, val_acc)

        if not len(val_set):
            best, best_epoch = params, epoch
        elif val_acc >= best_acc:
            # accuracy ties go to the lower validation loss
            val_loss, _ = batch_loss(params, ctx, val_set.expression, val_set.labels, with_grad=False)
            if val_acc > best_acc or val_loss < best_loss:
                best, best_acc, best_loss, best_epoch = params, val_acc, val_loss, epoch

    logger.info("trained %d epochs; best validation epoch %d", config.epochs, best_epoch)
    return TrainResult(params=best, history=history, context=ctx, best_epoch=best_epoch)


def save_history(history: Sequence[HistoryRow], file) -> None:
    df = pd.DataFrame([asdict(h) for h in history], columns=HISTORY_COLUMNS)
    Path(file).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(file, sep="\t", index=False, float_format="%.17g", lineterminator="\n", na_rep="nan")


# ---------- checkpoint ----------

@dataclass(eq=False)
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    max_path_len: int
    graph_fingerprint: int
    path_fingerprint: int

    def check_against(self, graph: GeneGraph, paths: PathList) -> None:
        if graph.fingerprint() != self.graph_fingerprint:
            raise FingerprintMismatchError("checkpoint was trained on a different gene graph")
        if paths.fingerprint() != self.path_fingerprint:
            raise FingerprintMismatchError("checkpoint was trained on a different path list")


def save_checkpoint(params: ModelParams, config: TrainConfig, ctx: ModelContext, file) -> None:
    check_params(params, ctx)
    header = json.dumps(
        {"config": config.to_dict(), "max_path_len": ctx.max_path_len}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(header)),
        header,
        struct.pack("<QQI", ctx.graph.fingerprint(), ctx.paths.fingerprint(), len(params)),
    ]
    for name in sorted(params):
        value = np.asarray(params[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<HB", len(raw_name), value.ndim))
        chunks.append(raw_name)
        chunks.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(value.tobytes())

    path = Path(file)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(file, graph: Optional[GeneGraph] = None, paths: Optional[PathList] = None) -> Checkpoint:
    """Read a TNGM file; when graph/paths are given their fingerprints must match."""
    where = str(file)
    try:
        raw = Path(file).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read: {e.strerror or e}", file=where) from None
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a model checkpoint (bad magic bytes)", file=where)
    try:
        version, header_len = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", file=where)
        offset = 12
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        graph_fp, path_fp, count = struct.unpack_from("<QQI", raw, offset)
        offset += 20
        params: ModelParams = {}
        for _ in range(count):
            name_len, ndim = struct.unpack_from("<HB", raw, offset)
            offset += 3
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
            offset += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if offset + 8 * size > len(raw):
                raise FormatError(f"parameter {name} truncated", file=where)
            params[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(shape)
            offset += 8 * size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}", file=where) from None
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes", file=where)

    ckpt = Checkpoint(
        params=params,
        config=TrainConfig.from_dict(header["config"]),
        max_path_len=int(header["max_path_len"]),
        graph_fingerprint=graph_fp,
        path_fingerprint=path_fp,
    )
    if graph is not None and paths is not None:
        ckpt.check_against(graph, paths)
    return ckpt


def context_for_checkpoint(ckpt: Checkpoint, graph: GeneGraph, paths: PathList, store: Optional[EmbeddingStore]) -> ModelContext:
    ckpt.check_against(graph, paths)
    ctx = build_context(ckpt.config.model_config(), graph, paths, store, max_path_len=ckpt.max_path_len, seed=ckpt.config.seed)
    check_params(ckpt.params, ctx)
    return ctx
