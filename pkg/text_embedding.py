"""text_embedding.py

Sentence embeddings for genes and paths: description templating, the binary
embedding store, a deterministic mock embedder and a batched HTTP client for
an external embedding service.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import requests
from dotenv import load_dotenv
from tqdm import tqdm

from errors import DataValidationError, FetchError, FormatError
from graph_model import Gene, GeneGraph, PathList
from prompts import (
    GENE_FALLBACK,
    PATH_CLAUSE,
    PATH_CLAUSE_SEPARATOR,
    PATH_PREFIX,
    PATH_SUFFIX,
    ROLE_RECEPTOR,
    ROLE_SIGNALING,
    ROLE_TARGET,
)

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_D_LLM = 768
STORE_MAGIC = b"TNGE"
STORE_VERSION = 1
KIND_GENE = 0
KIND_PATH = 1

EmbedFn = Callable[[Sequence[str]], List[np.ndarray]]


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    d_llm: int = DEFAULT_D_LLM
    gene_vectors: Dict[str, np.ndarray] = field(default_factory=dict)
    path_vectors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.d_llm < 1:
            raise DataValidationError("d_llm must be >= 1")
        for kind, table in (("gene", self.gene_vectors), ("path", self.path_vectors)):
            for key, vec in table.items():
                if np.shape(vec) != (self.d_llm,):
                    raise DataValidationError(f"{kind} vector {key!r} has width {np.size(vec)}, expected {self.d_llm}")

    def equals(self, other: "EmbeddingStore") -> bool:
        def same(a: Dict[str, np.ndarray], b: Dict[str, np.ndarray]) -> bool:
            return list(a) == list(b) and all(np.array_equal(a[k], b[k]) for k in a)

        return self.d_llm == other.d_llm and same(self.gene_vectors, other.gene_vectors) and same(
            self.path_vectors, other.path_vectors
        )


@dataclass(frozen=True)
class EmbedClientConfig:
    endpoint: str = field(default_factory=lambda: os.getenv("TNG_EMBED_ENDPOINT", "").strip())
    timeout: float = 30.0
    batch_size: int = 32
    retries: int = 3
    d_llm: int = DEFAULT_D_LLM
    backoff: float = 0.5
    max_workers: int = 1

    def validate(self) -> None:
        if not self.endpoint:
            raise DataValidationError("embedding endpoint is empty (set TNG_EMBED_ENDPOINT or --endpoint)")
        if self.batch_size < 1:
            raise DataValidationError("batch_size must be >= 1")
        if self.retries < 0 or self.timeout <= 0 or self.max_workers < 1:
            raise DataValidationError("retries >= 0, timeout > 0 and max_workers >= 1 required")


# ---------- descriptions ----------

def describe_gene(gene: Gene) -> str:
    if gene.description:
        return gene.description
    symbol = gene.symbol or gene.gene_id
    return GENE_FALLBACK.format(symbol=symbol, gene_id=gene.gene_id)


def _role(i: int, length: int) -> str:
    if i == 0:
        return ROLE_RECEPTOR
    if i == length - 1:
        return ROLE_TARGET
    return ROLE_SIGNALING


def describe_path(path: Sequence[int], graph: GeneGraph) -> str:
    if len(path) < 2:
        raise DataValidationError(f"path of length {len(path)} cannot be described (need >= 2)")
    symbols = [graph.genes[v].symbol or graph.genes[v].gene_id for v in path]
    clauses = [
        PATH_CLAUSE.format(
            role_a=_role(i, len(path)), symbol_a=symbols[i],
            role_b=_role(i + 1, len(path)), symbol_b=symbols[i + 1],
        )
        for i in range(len(path) - 1)
    ]
    return PATH_PREFIX + PATH_CLAUSE_SEPARATOR.join(clauses) + PATH_SUFFIX


# ---------- embedders ----------

def mock_embed(text: str, d_llm: int = DEFAULT_D_LLM, seed: int = 0) -> np.ndarray:
    """Unit-norm pseudorandom vector keyed by (seed, text bytes)."""
    if d_llm < 1:
        raise DataValidationError("d_llm must be >= 1")
    digest = hashlib.sha256(struct.pack("<q", seed) + text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(d_llm)
    return vec / np.linalg.norm(vec)


def mock_embedder(d_llm: int, seed: int = 0) -> EmbedFn:
    return lambda texts: [mock_embed(t, d_llm, seed) for t in texts]


def _parse_batch(body: str, expected: int, d_llm: int, batch_no: int) -> List[np.ndarray]:
    lines = [ln for ln in body.strip("\n").split("\n")] if body.strip() else []
    if len(lines) != expected:
        raise FetchError(f"batch {batch_no}: expected {expected} vectors, got {len(lines)}")
    out = []
    for ln in lines:
        try:
            vec = np.array([float(x) for x in ln.split(",")], dtype=np.float64)
        except ValueError:
            raise FetchError(f"batch {batch_no}: unparsable vector line") from None
        if vec.shape != (d_llm,):
            raise FetchError(f"batch {batch_no}: width mismatch, got {vec.size} expected {d_llm}")
        out.append(vec)
    return out


def _post_batch(config: EmbedClientConfig, batch: Sequence[str], batch_no: int) -> List[np.ndarray]:
    # the wire format is newline-delimited, so embedded newlines are flattened
    body = "\n".join(t.replace("\r", " ").replace("\n", " ") for t in batch).encode("utf-8")
    last_error: Optional[Exception] = None
    for attempt in range(config.retries + 1):
        try:
            resp = requests.post(
                config.endpoint,
                data=body,
                timeout=config.timeout,
                headers={"Content-Type": "text/plain; charset=utf-8"},
            )
            resp.raise_for_status()
        except requests.RequestException as e:
            last_error = e
            if attempt < config.retries:
                wait = config.backoff * (2 ** attempt)
                logger.warning("embedding batch %d failed (%s); retry %d in %.2fs", batch_no, e, attempt + 1, wait)
                time.sleep(wait)
            continue
        return _parse_batch(resp.text, len(batch), config.d_llm, batch_no)
    raise FetchError(f"embedding batch {batch_no} failed after {config.retries + 1} attempts: {last_error}")


def fetch_embeddings(config: EmbedClientConfig, texts: Sequence[str], *, progress: bool = False) -> List[np.ndarray]:
    """POST texts in batches; results come back in input order whatever the concurrency."""
    if not texts:
        return []
    config.validate()
    batches = [list(texts[i:i + config.batch_size]) for i in range(0, len(texts), config.batch_size)]
    jobs = range(len(batches))

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            results = list(tqdm(
                pool.map(lambda b: _post_batch(config, batches[b], b), jobs),
                total=len(batches), desc="embed", disable=not progress,
            ))
    else:
        results = [_post_batch(config, batches[b], b) for b in tqdm(jobs, desc="embed", disable=not progress)]
    return [vec for batch in results for vec in batch]


def http_embedder(config: EmbedClientConfig, *, progress: bool = False) -> EmbedFn:
    return lambda texts: fetch_embeddings(config, texts, progress=progress)


# ---------- store building ----------

def build_embedding_store(graph: GeneGraph, paths: PathList, embed_fn: EmbedFn, d_llm: int) -> EmbeddingStore:
    gene_texts = [describe_gene(g) for g in graph.genes]
    path_texts = [describe_path(nodes, graph) for nodes in paths.paths]
    vectors = embed_fn(gene_texts + path_texts)
    if len(vectors) != len(gene_texts) + len(path_texts):
        raise FetchError(f"embedder returned {len(vectors)} vectors for {len(gene_texts) + len(path_texts)} texts")
    genes = {g.gene_id: np.asarray(v, dtype=np.float64) for g, v in zip(graph.genes, vectors)}
    rest = vectors[len(gene_texts):]
    path_vectors = {pid: np.asarray(v, dtype=np.float64) for pid, v in zip(paths.path_ids, rest)}
    return EmbeddingStore(d_llm=d_llm, gene_vectors=genes, path_vectors=path_vectors)


def resolve_gene_matrix(store: EmbeddingStore, graph: GeneGraph, seed: int = 0) -> np.ndarray:
    """n×d_llm gene embeddings; missing genes fall back to the mock embedding of their description."""
    rows = []
    missing = 0
    for g in graph.genes:
        vec = store.gene_vectors.get(g.gene_id)
        if vec is None:
            missing += 1
            vec = mock_embed(describe_gene(g), store.d_llm, seed)
        rows.append(vec)
    if missing:
        logger.warning("%d genes have no stored embedding; using mock fallback", missing)
    return np.vstack(rows) if rows else np.zeros((0, store.d_llm))


def resolve_path_matrix(store: EmbeddingStore, paths: PathList, graph: GeneGraph, seed: int = 0) -> np.ndarray:
    rows = []
    missing = 0
    for pid, nodes in zip(paths.path_ids, paths.paths):
        vec = store.path_vectors.get(pid)
        if vec is None:
            missing += 1
            vec = mock_embed(describe_path(nodes, graph), store.d_llm, seed)
        rows.append(vec)
    if missing:
        logger.warning("%d paths have no stored embedding; using mock fallback", missing)
    return np.vstack(rows) if rows else np.zeros((0, store.d_llm))


# ---------- store IO ----------

def save_embedding_store(store: EmbeddingStore, file) -> None:
    """Write the TNGE file atomically (temp file then rename)."""
    records = [(KIND_GENE, k, v) for k, v in store.gene_vectors.items()]
    records += [(KIND_PATH, k, v) for k, v in store.path_vectors.items()]
    chunks = [STORE_MAGIC, struct.pack("<IIQ", STORE_VERSION, store.d_llm, len(records))]
    for kind, key, vec in records:
        raw_key = key.encode("utf-8")
        chunks.append(struct.pack("<BI", kind, len(raw_key)))
        chunks.append(raw_key)
        chunks.append(np.asarray(vec, dtype="<f8").tobytes())

    path = Path(file)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_embedding_store(file) -> EmbeddingStore:
    try:
        raw = Path(file).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read: {e.strerror or e}", file=str(file)) from None
    if raw[:4] != STORE_MAGIC:
        raise FormatError("not an embedding store (bad magic bytes)", file=str(file))
    if len(raw) < 20:
        raise FormatError("truncated header", file=str(file))
    version, d_llm, count = struct.unpack_from("<IIQ", raw, 4)
    if version != STORE_VERSION:
        raise FormatError(f"unsupported store version {version}", file=str(file))

    offset = 20
    genes: Dict[str, np.ndarray] = {}
    paths: Dict[str, np.ndarray] = {}
    width = 8 * d_llm
    for n in range(count):
        if offset + 5 > len(raw):
            raise FormatError(f"record {n} truncated", file=str(file))
        kind, key_len = struct.unpack_from("<BI", raw, offset)
        offset += 5
        if kind not in (KIND_GENE, KIND_PATH):
            raise FormatError(f"record {n} has unknown kind {kind} (width inconsistency?)", file=str(file))
        if offset + key_len + width > len(raw):
            raise FormatError(f"record {n} truncated (width inconsistency?)", file=str(file))
        try:
            key = raw[offset:offset + key_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"record {n} key is not UTF-8", file=str(file)) from None
        offset += key_len
        vec = np.frombuffer(raw, dtype="<f8", count=d_llm, offset=offset).astype(np.float64)
        offset += width
        table = genes if kind == KIND_GENE else paths
        if key in table:
            raise FormatError(f"duplicate key {key!r}", file=str(file))
        table[key] = vec
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes (width inconsistency?)", file=str(file))
    return EmbeddingStore(d_llm=d_llm, gene_vectors=genes, path_vectors=paths)
