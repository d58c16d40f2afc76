from __future__ import annotations

import numpy as np
import pytest

from graph_model import Edge, Gene, GeneGraph, PathList, synthesize_dataset
from model import ModelConfig, build_context
from text_embedding import build_embedding_store, mock_embedder

TINY_D_LLM = 6


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size training runs")


@pytest.fixture
def five_gene_graph():
    """Genes 1..5 with edges 1->3, 2->3, 3->4, 4->5 (stored 0-based)."""
    genes = tuple(Gene(f"G{i}", f"S{i}", None if i == 5 else f"Gene S{i} description.") for i in range(1, 6))
    edges = (Edge(0, 2, 0), Edge(1, 2, 1), Edge(2, 3, 0), Edge(3, 4, 1))
    return GeneGraph(genes, edges, 2)


@pytest.fixture
def five_gene_paths():
    return PathList(("P1", "P2"), ((0, 2, 3), (1, 2, 3, 4)))


@pytest.fixture
def tiny_config():
    return ModelConfig(n_layers=2, h_emb=8, heads=2, d_k=4, r=2, u=4, d_llm=TINY_D_LLM, d_expand=4, d_max=3)


@pytest.fixture
def tiny_data():
    return synthesize_dataset(6, 3, 12, 0, 2.0, seed=3, max_path_len=4)


@pytest.fixture
def tiny_context(tiny_config, tiny_data):
    graph, paths, _ = tiny_data
    store = build_embedding_store(graph, paths, mock_embedder(TINY_D_LLM), TINY_D_LLM)
    return build_context(tiny_config, graph, paths, store)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
